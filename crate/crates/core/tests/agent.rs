mod common;

use examguard::agent::{replay, write_alert_log, Agent, AgentError, AlertTrigger, SessionStatus};
use examguard::dataset::Dataset;
use examguard::encoder::Label;
use examguard::ipdetector::{DecisionReason, IpAddress, IpStore, QuestionBank, QuestionSetPool};
use examguard::model::{train, Model, ModelConfig, TrainConfig};

fn pool() -> QuestionSetPool {
    QuestionSetPool::generate(&QuestionBank::placeholder(20, 4), 4, 9).unwrap()
}

fn dnn(data: &Dataset) -> Model {
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 5,
        ..TrainConfig::default()
    };
    train(
        Model::build(ModelConfig::from_name("dnn", 1).unwrap()).unwrap(),
        data,
        None,
        cfg,
    )
    .unwrap()
    .model
}

#[test]
fn lms_sample_replay_raises_one_repeat_alert() {
    let data = common::lms_sample();
    let model = Model::build(ModelConfig::from_name("dnn", 0).unwrap()).unwrap();
    let out = replay(&data, &common::lms_sample_encoder(), &model, &pool(), 3).unwrap();
    let repeats: Vec<_> = out
        .alerts
        .iter()
        .filter(|a| a.trigger == AlertTrigger::IpRepeat)
        .collect();
    assert_eq!(repeats.len(), 1);
    assert_eq!(repeats[0].ip, IpAddress::new(211, 243, 246, 3));
    assert_eq!(repeats[0].reason, Some(DecisionReason::RepeatIp));
    assert_eq!(
        out.decisions
            .iter()
            .filter(|d| d.ip_reason == DecisionReason::RepeatIp)
            .count(),
        1
    );
    assert_eq!(out.store.len(), 6);
}

#[test]
fn behaviour_alerts_follow_predictions() {
    let train_set = common::synth(300, 0.4, 21);
    let model = dnn(&train_set);
    let test = common::synth(80, 0.4, 22);
    let out = replay(&test, &common::default_encoder(), &model, &pool(), 4).unwrap();
    let behaviour: Vec<_> = out
        .alerts
        .iter()
        .filter(|a| a.trigger == AlertTrigger::BehaviorSuspected)
        .collect();
    let suspected: Vec<_> = out.decisions.iter().filter(|d| d.label == Label::Suspected).collect();
    assert!(!suspected.is_empty());
    assert_eq!(behaviour.len(), suspected.len());
    for (alert, d) in behaviour.iter().zip(&suspected) {
        let p = alert.probability.unwrap();
        assert_eq!(p, d.suspected_probability);
        assert!(p >= 0.5);
        assert_ne!(alert.new_set_id.as_deref(), Some(d.set_id.as_str()));
    }
    assert!(out.alerts.len() <= 2 * test.len());
    assert!(out.alerts.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
}

#[test]
fn replay_is_deterministic() {
    let data = common::synth(60, 0.4, 5);
    let model = dnn(&data);
    let a = replay(&data, &common::default_encoder(), &model, &pool(), 8).unwrap();
    let b = replay(&data, &common::default_encoder(), &model, &pool(), 8).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_dataset_gives_an_empty_log() {
    let data = common::named("empty", common::synth(5, 0.4, 5));
    let empty = Dataset::new("empty", data.provenance, Vec::new());
    let model = Model::build(ModelConfig::from_name("dnn", 0).unwrap()).unwrap();
    let out = replay(&empty, &common::default_encoder(), &model, &pool(), 1).unwrap();
    assert!(out.alerts.is_empty() && out.decisions.is_empty() && out.store.is_empty());
}

#[test]
fn completed_sessions_are_closed() {
    let data = common::synth(1, 0.0, 6);
    let raw = data.samples()[0].raw.clone().unwrap();
    let model = Model::build(ModelConfig::from_name("dnn", 0).unwrap()).unwrap();
    let agent = Agent::new(IpStore::new(), pool(), common::default_encoder(), &model, 2);
    let (mut state, alert) = agent.start_session("c1", raw.ip).unwrap();
    assert!(alert.is_none());
    agent.record_answer(&mut state, 0, 5).unwrap();
    agent.finish_session(&mut state, &raw).unwrap();
    assert_eq!(state.status, SessionStatus::Completed);
    assert!(matches!(
        agent.record_answer(&mut state, 1, 5),
        Err(AgentError::Completed(_))
    ));
    assert!(matches!(
        agent.finish_session(&mut state, &raw),
        Err(AgentError::Completed(_))
    ));
    let (_, again) = agent.start_session("c2", raw.ip).unwrap();
    assert_eq!(again.unwrap().trigger, AlertTrigger::IpRepeat);
}

#[test]
fn alert_log_lines_keep_field_order() {
    let data = common::lms_sample();
    let model = Model::build(ModelConfig::from_name("dnn", 0).unwrap()).unwrap();
    let out = replay(&data, &common::lms_sample_encoder(), &model, &pool(), 3).unwrap();
    let mut buf = Vec::new();
    write_alert_log(&out.alerts, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), out.alerts.len());
    let first = text.lines().find(|l| l.contains("ip_repeat")).unwrap();
    let keys = [
        "\"session_id\"",
        "\"ip\"",
        "\"trigger\"",
        "\"reason\"",
        "\"new_set_id\"",
        "\"timestamp\"",
    ];
    let pos: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{first}");
    assert!(first.contains("\"trigger\":\"ip_repeat\""));
}
