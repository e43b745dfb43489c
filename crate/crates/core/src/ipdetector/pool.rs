use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IpError;
use crate::encoder::Difficulty;
use crate::numerics::Prng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankQuestion {
    pub id: String,
    pub text: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    pub difficulty: Difficulty,
}

/// Shared question bank every set is drawn from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BankQuestion>", into = "Vec<BankQuestion>")]
pub struct QuestionBank {
    questions: Vec<BankQuestion>,
}

impl TryFrom<Vec<BankQuestion>> for QuestionBank {
    type Error = IpError;

    fn try_from(questions: Vec<BankQuestion>) -> Result<Self, IpError> {
        Self::new(questions)
    }
}

impl From<QuestionBank> for Vec<BankQuestion> {
    fn from(b: QuestionBank) -> Self {
        b.questions
    }
}

impl QuestionBank {
    pub fn new(questions: Vec<BankQuestion>) -> Result<Self, IpError> {
        if questions.is_empty() {
            return Err(IpError::Bank("no questions".into()));
        }
        let mut ids = HashSet::new();
        for q in &questions {
            if !ids.insert(q.id.as_str()) {
                return Err(IpError::Bank(format!("duplicate question id {:?}", q.id)));
            }
            if q.choices.is_empty() || q.answer_index >= q.choices.len() {
                return Err(IpError::Bank(format!(
                    "question {:?} has answer_index {} but {} choices",
                    q.id,
                    q.answer_index,
                    q.choices.len()
                )));
            }
        }
        Ok(Self { questions })
    }

    /// Bank of numbered stand-in questions, for simulations without real content.
    pub fn placeholder(n_questions: usize, n_choices: usize) -> Self {
        let questions = (1..=n_questions)
            .map(|i| BankQuestion {
                id: format!("q{i}"),
                text: format!("Question {i}"),
                choices: (0..n_choices.max(1))
                    .map(|c| format!("choice {}", (b'a' + c as u8) as char))
                    .collect(),
                answer_index: 0,
                difficulty: Difficulty::Easy,
            })
            .collect();
        Self::new(questions).expect("placeholder bank is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IpError> {
        Ok(serde_json::from_str(&super::read_file(path.as_ref())?)?)
    }

    pub fn questions(&self) -> &[BankQuestion] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// One assessment variant: a permutation of the bank with each question's
/// choices independently permuted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub set_id: String,
    /// Bank indices in presentation order.
    pub question_order: Vec<usize>,
    /// For each presented question, the order of its bank choices.
    pub choice_orders: Vec<Vec<usize>>,
}

impl QuestionSet {
    /// Where the correct answer of the question at `position` ends up.
    pub fn answer_position(&self, bank: &QuestionBank, position: usize) -> usize {
        let q = &bank.questions()[self.question_order[position]];
        self.choice_orders[position]
            .iter()
            .position(|&c| c == q.answer_index)
            .expect("choice order is a permutation")
    }
}

/// Fisher-Yates over question order, then over each question's choices.
pub fn shuffle_set(bank: &QuestionBank, set_id: impl Into<String>, seed: u64) -> QuestionSet {
    let mut rng = Prng::new(seed);
    let mut question_order: Vec<usize> = (0..bank.len()).collect();
    rng.shuffle(&mut question_order);
    let choice_orders = question_order
        .iter()
        .map(|&q| {
            let mut order: Vec<usize> = (0..bank.questions()[q].choices.len()).collect();
            rng.shuffle(&mut order);
            order
        })
        .collect();
    QuestionSet {
        set_id: set_id.into(),
        question_order,
        choice_orders,
    }
}

/// `A`, `B`, ..., `Z`, `AA`, `AB`, ...
fn set_name(mut i: usize) -> String {
    let mut name = Vec::new();
    loop {
        name.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    name.reverse();
    String::from_utf8(name).unwrap()
}

/// The sets available for assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSetPool {
    sets: Vec<QuestionSet>,
}

impl QuestionSetPool {
    pub fn new(sets: Vec<QuestionSet>) -> Result<Self, IpError> {
        let mut ids = HashSet::new();
        if let Some(first) = sets.first() {
            let n = first.question_order.len();
            for s in &sets {
                if !ids.insert(s.set_id.as_str()) {
                    return Err(IpError::Bank(format!("duplicate set id {:?}", s.set_id)));
                }
                let mut seen = s.question_order.clone();
                seen.sort_unstable();
                if seen != (0..n).collect::<Vec<_>>() || s.choice_orders.len() != n {
                    return Err(IpError::Bank(format!(
                        "set {:?} is not a permutation of the bank",
                        s.set_id
                    )));
                }
            }
        }
        Ok(Self { sets })
    }

    /// `n_sets` shuffles of `bank`, named `A`, `B`, ... with seeds drawn from `seed`.
    pub fn generate(bank: &QuestionBank, n_sets: usize, seed: u64) -> Result<Self, IpError> {
        let mut rng = Prng::new(seed);
        Self::new(
            (0..n_sets)
                .map(|i| shuffle_set(bank, set_name(i), rng.next_u64()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.sets.iter().map(|s| s.set_id.as_str())
    }

    pub fn get(&self, set_id: &str) -> Option<&QuestionSet> {
        self.sets.iter().find(|s| s.set_id == set_id)
    }

    pub fn sets(&self) -> &[QuestionSet] {
        &self.sets
    }
}
