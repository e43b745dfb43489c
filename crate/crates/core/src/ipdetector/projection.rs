use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{IpAddress, IpError, IpStore};
use crate::encoder::Label;
use crate::numerics::{pca_fit, Tensor};

/// One address placed in the plane of the two leading principal components
/// of its scaled octets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedIp {
    pub ip: IpAddress,
    pub x: f64,
    pub y: f64,
    pub label: Label,
}

/// Projects every address in the store. Labels come from `labels`, falling
/// back to the store's flag.
pub fn project_ips(store: &IpStore, labels: &BTreeMap<IpAddress, Label>) -> Result<Vec<ProjectedIp>, IpError> {
    let tagged: Vec<(IpAddress, Label)> = store
        .iter()
        .map(|(ip, entry)| {
            let fallback = if entry.flagged { Label::Suspected } else { Label::Normal };
            (*ip, labels.get(ip).copied().unwrap_or(fallback))
        })
        .collect();
    project_points(&tagged)
}

/// Projects distinct labelled addresses (duplicates keep their first label).
pub fn project_points(ips: &[(IpAddress, Label)]) -> Result<Vec<ProjectedIp>, IpError> {
    let mut distinct: BTreeMap<IpAddress, Label> = BTreeMap::new();
    for (ip, label) in ips {
        distinct.entry(*ip).or_insert(*label);
    }
    if distinct.len() < 2 {
        return Ok(distinct
            .into_iter()
            .map(|(ip, label)| ProjectedIp {
                ip,
                x: 0.0,
                y: 0.0,
                label,
            })
            .collect());
    }
    let rows: Vec<Vec<f64>> = distinct
        .keys()
        .map(|ip| ip.octets().iter().map(|&o| f64::from(o) / 255.0).collect())
        .collect();
    let features = Tensor::from_rows(&rows)?;
    let pca = pca_fit(&features, 2)?;
    let projected = pca.transform(&features)?;
    Ok(distinct
        .into_iter()
        .enumerate()
        .map(|(i, (ip, label))| ProjectedIp {
            ip,
            x: projected.row(i)[0],
            y: projected.row(i)[1],
            label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> IpAddress {
        s.parse().unwrap()
    }

    fn dist(a: &ProjectedIp, b: &ProjectedIp) -> f64 {
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
    }

    #[test]
    fn duplicates_collapse_to_one_point() {
        let pts = project_points(&[(ip("1.2.3.4"), Label::Normal), (ip("1.2.3.4"), Label::Suspected)]).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].x, pts[0].y), (0.0, 0.0));
    }

    #[test]
    fn same_subnet_pair_stays_close() {
        let pts = project_points(&[
            (ip("10.0.0.1"), Label::Normal),
            (ip("10.0.0.2"), Label::Normal),
            (ip("200.50.3.1"), Label::Suspected),
        ])
        .unwrap();
        // three points span at most a plane, so two components keep every
        // pairwise octet distance exactly
        let octet = |a: &str, b: &str| -> f64 {
            ip(a)
                .octets()
                .iter()
                .zip(ip(b).octets())
                .map(|(&x, y)| ((f64::from(x) - f64::from(y)) / 255.0).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        assert!((dist(&pts[0], &pts[1]) - octet("10.0.0.1", "10.0.0.2")).abs() < 1e-12);
        assert!((dist(&pts[0], &pts[2]) - octet("10.0.0.1", "200.50.3.1")).abs() < 1e-12);
        assert!(dist(&pts[0], &pts[1]) < dist(&pts[0], &pts[2]));
        assert!(dist(&pts[0], &pts[1]) < dist(&pts[1], &pts[2]));
    }
}
