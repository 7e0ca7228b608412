//! Evaluation glue: split a dataset, describe every image once, score it
//! with any of the four matchers and build the report.

use std::fmt;
use std::str::FromStr;

use ndgrad::rng::derive_seed;
use ndgrad::RngState;
use serde::{Deserialize, Serialize};

use crate::classifiers::{
    knn_score, pls_score, pls_train, softmax_score, svm_score, svm_train, zscore_fit,
    DescriptorSet, ScoreMatrix, SvmConfig,
};
use crate::dataset::Sample;
use crate::error::{invalid, Error, Result};
use crate::eval::{make_split_firstk, make_split_internetstyle, EvaluationReport, SplitPlan};
use crate::nets::Model;
use crate::train::describe;

pub const DEFAULT_PLS_COMPONENTS: usize = 50;
pub const DEFAULT_FIRSTK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Internet,
    FirstK,
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "internet" => Ok(SplitKind::Internet),
            "firstk" => Ok(SplitKind::FirstK),
            _ => Err(invalid(format!("unknown split {s:?} (internet|firstk)"))),
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Internet => "internet",
            SplitKind::FirstK => "firstk",
        })
    }
}

pub fn make_split(kind: SplitKind, samples: &[Sample], seed: u64, k: usize) -> Result<SplitPlan> {
    let palms: Vec<u32> = samples.iter().map(|s| s.palm_id).collect();
    match kind {
        SplitKind::Internet => {
            let mut rng = RngState::new(derive_seed(&[seed, 0x5917]), 0);
            make_split_internetstyle(&palms, &mut rng)
        }
        SplitKind::FirstK => make_split_firstk(&palms, k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Softmax,
    Pls,
    Svm,
    Knn,
}

impl Classifier {
    pub const ALL: [Classifier; 4] = [
        Classifier::Softmax,
        Classifier::Pls,
        Classifier::Svm,
        Classifier::Knn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Classifier::Softmax => "softmax",
            Classifier::Pls => "pls",
            Classifier::Svm => "svm",
            Classifier::Knn => "knn",
        }
    }
}

impl FromStr for Classifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Classifier::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown classifier {s:?} (softmax|pls|svm|knn)")))
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Eval-mode network outputs for every sample of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Described {
    pub descriptors: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

/// Runs the model once per image; left hands are mirrored first.
pub fn describe_samples(model: &Model<f32>, samples: &[Sample]) -> Result<Described> {
    let mut descriptors = Vec::with_capacity(samples.len());
    let mut logits = Vec::with_capacity(samples.len());
    for s in samples {
        let (d, l) = describe(model, &s.to_right_hand().image)?;
        descriptors.push(d);
        logits.push(l);
    }
    Ok(Described {
        descriptors,
        logits,
    })
}

/// Gallery/probe view of one split.
pub struct EvalSet<'a> {
    pub samples: &'a [Sample],
    pub plan: &'a SplitPlan,
    pub described: &'a Described,
}

impl EvalSet<'_> {
    pub fn gallery(&self) -> Result<DescriptorSet> {
        let idx = self.plan.train_indices();
        DescriptorSet::new(
            idx.iter().map(|&i| self.described.descriptors[i].clone()).collect(),
            idx.iter().map(|&i| self.samples[i].palm_id).collect(),
        )
    }

    pub fn probe_ids(&self) -> Vec<String> {
        self.plan
            .probe_indices()
            .iter()
            .map(|&i| self.samples[i].path.clone())
            .collect()
    }

    pub fn probe_truth(&self) -> Vec<u32> {
        self.plan
            .probe_indices()
            .iter()
            .map(|&i| self.samples[i].palm_id)
            .collect()
    }

    /// `(training images of the probe's palm, probe image side)`.
    pub fn probe_meta(&self) -> Vec<(usize, usize)> {
        self.plan
            .probe_indices()
            .iter()
            .map(|&i| {
                let s = &self.samples[i];
                (
                    self.plan.train_count(s.palm_id),
                    s.image.width().max(s.image.height()),
                )
            })
            .collect()
    }

    fn probe_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.plan
            .probe_indices()
            .iter()
            .map(|&i| rows[i].clone())
            .collect()
    }

    /// Scores every probe; `model_classes` is the logit order of the network.
    pub fn score(
        &self,
        classifier: Classifier,
        model_classes: &[u32],
        pls_components: usize,
        svm: &SvmConfig,
    ) -> Result<ScoreMatrix> {
        let ids = self.probe_ids();
        let probes = self.probe_rows(&self.described.descriptors);
        match classifier {
            Classifier::Softmax => {
                let gallery = self.plan.gallery_classes();
                if model_classes != gallery.as_slice() {
                    return Err(invalid(format!(
                        "the model was trained on {} classes that do not match the {} gallery classes of this split",
                        model_classes.len(),
                        gallery.len()
                    )));
                }
                softmax_score(model_classes, &self.probe_rows(&self.described.logits), &ids)
            }
            Classifier::Knn => knn_score(&self.gallery()?, &probes, &ids),
            Classifier::Pls | Classifier::Svm => {
                let gallery = self.gallery()?;
                let z = zscore_fit(&gallery)?;
                let train = DescriptorSet::new(z.apply(&gallery.x), gallery.labels.clone())?;
                let probes = z.apply(&probes);
                if classifier == Classifier::Pls {
                    pls_score(&pls_train(&train, pls_components)?, &probes, &ids)
                } else {
                    svm_score(&svm_train(&train, svm)?, &probes, &ids)
                }
            }
        }
    }

    pub fn report(&self, scores: &ScoreMatrix, seed: u64, config_hash: String) -> Result<EvaluationReport> {
        EvaluationReport::build(scores, &self.probe_truth(), &self.probe_meta(), seed, config_hash)
    }
}
