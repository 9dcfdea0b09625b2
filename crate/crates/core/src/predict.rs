//! Single-image classification result.

use serde::Serialize;

use crate::dataset::{class_code, class_label, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::ranked;
use crate::ops::softmax;

pub const PREDICTION_SCHEMA: &str = "drivecls.prediction/1";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopEntry {
    pub class_id: usize,
    pub code: &'static str,
    pub prob: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub schema: &'static str,
    pub class_id: usize,
    pub code: &'static str,
    pub label: &'static str,
    pub probs: Vec<f32>,
    pub topk: Vec<TopEntry>,
}

impl Prediction {
    /// Softmax over ten logits; `topk` is descending with ties broken by lower class id.
    pub fn from_logits(logits: &[f32], k: usize) -> Result<Self> {
        if logits.len() != NUM_CLASSES {
            return Err(Error::shape("prediction", NUM_CLASSES, logits.len()));
        }
        if k == 0 {
            return Err(Error::Config("topk must be at least 1".into()));
        }
        let probs = softmax(logits)?;
        let order = ranked(&probs);
        let topk = order
            .iter()
            .take(k.min(NUM_CLASSES))
            .map(|&c| TopEntry {
                class_id: c,
                code: class_code(c),
                prob: probs[c],
            })
            .collect();
        let best = order[0];
        Ok(Prediction {
            schema: PREDICTION_SCHEMA,
            class_id: best,
            code: class_code(best),
            label: class_label(best),
            probs,
            topk,
        })
    }

    pub fn confidence(&self) -> f32 {
        self.probs[self.class_id]
    }

    /// `c1 Texting - right hand p=0.98`
    pub fn headline(&self) -> String {
        format!("{} {} p={:.2}", self.code, self.label, self.confidence())
    }
}
