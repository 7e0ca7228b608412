//! Matchers on palmprint descriptors: z-score, one-against-all PLS and
//! linear SVM, 1-NN with cosine distance, and softmax scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row-major descriptors with one label per row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptorSet {
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

impl DescriptorSet {
    pub fn new(x: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if x.len() != labels.len() {
            return Err(invalid(format!(
                "{} descriptors for {} labels",
                x.len(),
                labels.len()
            )));
        }
        if let Some(d) = x.first().map(Vec::len) {
            if x.iter().any(|r| r.len() != d) {
                return Err(invalid("descriptors have unequal lengths"));
            }
        }
        Ok(Self { x, labels })
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Per-dimension standardization fitted on training descriptors only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose variance was zero; their std is set to 1.
    pub clamped: Vec<bool>,
}

pub fn zscore_fit(train: &DescriptorSet) -> Result<ZScore> {
    let n = train.x.len();
    if n < 2 {
        return Err(invalid(format!("z-score needs at least 2 samples, got {n}")));
    }
    let d = train.dim();
    let mut mean = vec![0.0; d];
    for r in &train.x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in &train.x {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut clamped = vec![false; d];
    let std = var
        .iter()
        .zip(clamped.iter_mut())
        .map(|(s, c)| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                *c = true;
                1.0
            }
        })
        .collect();
    Ok(ZScore { mean, std, clamped })
}

impl ZScore {
    pub fn apply(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                r.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    }

    pub fn invert(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                r.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, s))| v * s + m)
                    .collect()
            })
            .collect()
    }
}

/// Scores of every probe against every gallery class; higher is more
/// similar. Classes are in ascending id order for every matcher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub tag: String,
    pub classes: Vec<u32>,
    pub probe_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn n_probes(&self) -> usize {
        self.scores.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["probe_id".to_string()];
        header.extend(self.classes.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (id, row) in self.probe_ids.iter().zip(&self.scores) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn parse_csv(text: &str, origin: &Path, tag: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        if header.first().map(String::as_str) != Some("probe_id") {
            return Err(perr(1, "first column must be probe_id".into()));
        }
        let classes = header[1..]
            .iter()
            .map(|h| h.trim().parse::<u32>().map_err(|_| perr(1, format!("bad class id {h:?}"))))
            .collect::<Result<Vec<u32>>>()?;
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(perr(1, "class ids must be strictly ascending".into()));
        }
        let mut probe_ids = Vec::new();
        let mut scores = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| perr(line, e.to_string()))?;
            if rec.len() != classes.len() + 1 {
                return Err(perr(line, format!("expected {} fields", classes.len() + 1)));
            }
            probe_ids.push(rec[0].to_string());
            let row = (1..rec.len())
                .map(|k| {
                    rec[k]
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| perr(line, format!("bad score {:?}", &rec[k])))
                })
                .collect::<Result<Vec<f64>>>()?;
            scores.push(row);
        }
        Ok(Self {
            tag: tag.to_string(),
            classes,
            probe_ids,
            scores,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A single-response PLS regression, kept as its NIPALS components so
/// that predictors with fewer components can be composed from a prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Pls1 {
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    /// Weight vectors `w_k`.
    pub w: Vec<Vec<f64>>,
    /// Loadings `p_k`.
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

impl Pls1 {
    pub fn fit(x: &[Vec<f64>], y: &[f64], k: usize) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(invalid("PLS needs at least two samples with one target each"));
        }
        let d = x[0].len();
        if k == 0 || k > (n - 1).min(d) {
            return Err(invalid(format!(
                "PLS components {k} outside [1, {}]",
                (n - 1).min(d)
            )));
        }
        let mut x_mean = vec![0.0; d];
        for r in x {
            for (m, v) in x_mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut xr: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&x_mean).map(|(v, m)| v - m).collect())
            .collect();
        let mut yr: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let (mut ws, mut ps, mut qs) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..k {
            let mut w = vec![0.0; d];
            for (r, &t) in xr.iter().zip(&yr) {
                for (wj, v) in w.iter_mut().zip(r) {
                    *wj += v * t;
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm < 1e-300 {
                break;
            }
            w.iter_mut().for_each(|v| *v /= norm);
            let t: Vec<f64> = xr.iter().map(|r| dot(r, &w)).collect();
            let tt = dot(&t, &t);
            if tt < 1e-300 {
                break;
            }
            let mut p = vec![0.0; d];
            for (r, &ti) in xr.iter().zip(&t) {
                for (pj, v) in p.iter_mut().zip(r) {
                    *pj += v * ti / tt;
                }
            }
            let q = dot(&yr, &t) / tt;
            for (r, &ti) in xr.iter_mut().zip(&t) {
                for (v, pj) in r.iter_mut().zip(&p) {
                    *v -= ti * pj;
                }
            }
            for (yi, &ti) in yr.iter_mut().zip(&t) {
                *yi -= q * ti;
            }
            ws.push(w);
            ps.push(p);
            qs.push(q);
        }
        if ws.is_empty() {
            return Err(invalid("PLS found no informative direction"));
        }
        Ok(Self {
            x_mean,
            y_mean,
            w: ws,
            p: ps,
            q: qs,
        })
    }

    pub fn components(&self) -> usize {
        self.q.len()
    }

    /// `(beta, intercept)` from the first `k` components:
    /// `beta = W (P^T W)^-1 q`.
    pub fn predictor(&self, k: usize) -> Result<(Vec<f64>, f64)> {
        let k = k.min(self.components());
        let d = self.x_mean.len();
        // P^T W is upper triangular for NIPALS, but solve generally.
        let mut ptw = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                ptw[i * k + j] = dot(&self.p[i], &self.w[j]);
            }
        }
        let c = ndgrad::linalg::solve(k, &ptw, &self.q[..k])?;
        let mut beta = vec![0.0; d];
        for (j, cj) in c.iter().enumerate() {
            for (b, wv) in beta.iter_mut().zip(&self.w[j]) {
                *b += wv * cj;
            }
        }
        let intercept = self.y_mean - dot(&self.x_mean, &beta);
        Ok((beta, intercept))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    pub components: usize,
    pub classes: Vec<u32>,
    pub coef: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

fn check_classes(train: &DescriptorSet) -> Result<Vec<u32>> {
    let classes = train.classes();
    if classes.len() < 2 {
        return Err(invalid("one-against-all training needs at least two classes"));
    }
    Ok(classes)
}

/// One PLS1 regressor per class with targets +1 (class) and -1 (rest).
pub fn pls_train(train: &DescriptorSet, k: usize) -> Result<PlsModel> {
    let classes = check_classes(train)?;
    let mut coef = Vec::with_capacity(classes.len());
    let mut intercept = Vec::with_capacity(classes.len());
    for &c in &classes {
        let y: Vec<f64> = train
            .labels
            .iter()
            .map(|&l| if l == c { 1.0 } else { -1.0 })
            .collect();
        let fit = Pls1::fit(&train.x, &y, k)?;
        let (b, i) = fit.predictor(k)?;
        coef.push(b);
        intercept.push(i);
    }
    Ok(PlsModel {
        components: k,
        classes,
        coef,
        intercept,
    })
}

fn linear_scores(
    tag: &str,
    classes: &[u32],
    coef: &[Vec<f64>],
    intercept: &[f64],
    probes: &[Vec<f64>],
    probe_ids: &[String],
) -> Result<ScoreMatrix> {
    let d = coef.first().map_or(0, Vec::len);
    if let Some(r) = probes.iter().find(|r| r.len() != d) {
        return Err(invalid(format!(
            "probe has {} dimensions, model expects {d}",
            r.len()
        )));
    }
    Ok(ScoreMatrix {
        tag: tag.to_string(),
        classes: classes.to_vec(),
        probe_ids: probe_ids.to_vec(),
        scores: probes
            .iter()
            .map(|r| {
                coef.iter()
                    .zip(intercept)
                    .map(|(w, b)| dot(w, r) + b)
                    .collect()
            })
            .collect(),
    })
}

pub fn pls_score(model: &PlsModel, probes: &[Vec<f64>], probe_ids: &[String]) -> Result<ScoreMatrix> {
    linear_scores("pls", &model.classes, &model.coef, &model.intercept, probes, probe_ids)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            reg: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: Vec<u32>,
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Hinge loss with L2 penalty, minimized by subgradient steps over the
/// samples in their given order. The penalty step is taken implicitly,
/// `w <- (w + lr * y x [margin < 1]) / (1 + lr * reg)`, so it stays stable
/// for any `reg`.
pub fn svm_train(train: &DescriptorSet, cfg: &SvmConfig) -> Result<SvmModel> {
    let classes = check_classes(train)?;
    let d = train.dim();
    let shrink = 1.0 / (1.0 + cfg.lr * cfg.reg);
    let mut ws = Vec::with_capacity(classes.len());
    let mut bs = Vec::with_capacity(classes.len());
    for &c in &classes {
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..cfg.epochs {
            for (x, &l) in train.x.iter().zip(&train.labels) {
                let y = if l == c { 1.0 } else { -1.0 };
                let active = y * (dot(&w, x) + b) < 1.0;
                for (wj, xj) in w.iter_mut().zip(x) {
                    let step = if active { cfg.lr * y * xj } else { 0.0 };
                    *wj = (*wj + step) * shrink;
                }
                if active {
                    b += cfg.lr * y;
                }
            }
        }
        ws.push(w);
        bs.push(b);
    }
    Ok(SvmModel { classes, w: ws, b: bs })
}

pub fn svm_score(model: &SvmModel, probes: &[Vec<f64>], probe_ids: &[String]) -> Result<ScoreMatrix> {
    linear_scores("svm", &model.classes, &model.w, &model.b, probes, probe_ids)
}

/// `1 - cos`, with distance 1 whenever either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot(a, b) / (na * nb)
}

/// Per class, the negated smallest cosine distance to that class's gallery
/// samples.
pub fn knn_score(gallery: &DescriptorSet, probes: &[Vec<f64>], probe_ids: &[String]) -> Result<ScoreMatrix> {
    if gallery.x.is_empty() {
        return Err(invalid("k-NN needs a non-empty gallery"));
    }
    let classes = gallery.classes();
    let scores = probes
        .iter()
        .map(|p| {
            let mut best = vec![f64::INFINITY; classes.len()];
            for (g, l) in gallery.x.iter().zip(&gallery.labels) {
                let k = classes.binary_search(l).expect("label in class list");
                best[k] = best[k].min(cosine_distance(p, g));
            }
            best.into_iter().map(|d| -d).collect()
        })
        .collect();
    Ok(ScoreMatrix {
        tag: "knn".into(),
        classes,
        probe_ids: probe_ids.to_vec(),
        scores,
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax probabilities of network logits; `classes` is the logit order.
pub fn softmax_score(
    classes: &[u32],
    logits: &[Vec<f64>],
    probe_ids: &[String],
) -> Result<ScoreMatrix> {
    if let Some(r) = logits.iter().find(|r| r.len() != classes.len()) {
        return Err(invalid(format!(
            "network has {} outputs but the gallery has {} classes",
            r.len(),
            classes.len()
        )));
    }
    Ok(ScoreMatrix {
        tag: "softmax".into(),
        classes: classes.to_vec(),
        probe_ids: probe_ids.to_vec(),
        scores: logits.iter().map(|r| softmax(r)).collect(),
    })
}
