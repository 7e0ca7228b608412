//! Evaluation protocols: gallery/probe splits, CMC, EER, conditional
//! accuracy and the evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndgrad::RngState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::ScoreMatrix;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Probe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub roles: Vec<Role>,
    pub palm_ids: Vec<u32>,
    /// Per image: its palm has no probe.
    pub distractor: Vec<bool>,
}

impl SplitPlan {
    fn from_roles(palm_ids: &[u32], roles: Vec<Role>) -> Self {
        let mut has_probe = BTreeMap::new();
        for (&p, &r) in palm_ids.iter().zip(&roles) {
            *has_probe.entry(p).or_insert(false) |= r == Role::Probe;
        }
        let distractor = palm_ids.iter().map(|p| !has_probe[p]).collect();
        Self {
            roles,
            palm_ids: palm_ids.to_vec(),
            distractor,
        }
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Role::Train)
    }

    pub fn probe_indices(&self) -> Vec<usize> {
        self.indices(Role::Probe)
    }

    fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] == role).collect()
    }

    /// Ascending palm ids that have at least one training image.
    pub fn gallery_classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.train_indices().iter().map(|&i| self.palm_ids[i]).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn train_count(&self, palm: u32) -> usize {
        self.palm_ids
            .iter()
            .zip(&self.roles)
            .filter(|(&p, &r)| p == palm && r == Role::Train)
            .count()
    }
}

fn group_by_palm(palm_ids: &[u32]) -> Result<BTreeMap<u32, Vec<usize>>> {
    if palm_ids.is_empty() {
        return Err(invalid("cannot split an empty dataset"));
    }
    let mut g: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &p) in palm_ids.iter().enumerate() {
        g.entry(p).or_default().push(i);
    }
    Ok(g)
}

/// Random half/half per palm, the odd image going to training; single-image
/// palms become distractors.
pub fn make_split_internetstyle(palm_ids: &[u32], rng: &mut RngState) -> Result<SplitPlan> {
    let groups = group_by_palm(palm_ids)?;
    let mut roles = vec![Role::Train; palm_ids.len()];
    for idx in groups.values() {
        let mut idx = idx.clone();
        rng.shuffle(&mut idx);
        let n_train = idx.len().div_ceil(2);
        for &i in &idx[n_train..] {
            roles[i] = Role::Probe;
        }
    }
    Ok(SplitPlan::from_roles(palm_ids, roles))
}

/// The first `k` images of each palm (manifest order) train, the rest probe.
pub fn make_split_firstk(palm_ids: &[u32], k: usize) -> Result<SplitPlan> {
    if k == 0 {
        return Err(invalid("first-k split with k = 0 leaves no gallery"));
    }
    let groups = group_by_palm(palm_ids)?;
    let mut roles = vec![Role::Train; palm_ids.len()];
    for idx in groups.values() {
        for &i in idx.iter().skip(k) {
            roles[i] = Role::Probe;
        }
    }
    Ok(SplitPlan::from_roles(palm_ids, roles))
}

/// 1-based rank of `truth` in a score row sorted by descending score, ties
/// going to the smaller class id.
pub fn rank_of(classes: &[u32], row: &[f64], truth: u32) -> Result<usize> {
    let k = classes
        .iter()
        .position(|&c| c == truth)
        .ok_or_else(|| invalid(format!("class {truth} is not in the gallery")))?;
    let s = row[k];
    let better = classes
        .iter()
        .zip(row)
        .filter(|&(&c, &v)| v > s || (v == s && c < truth))
        .count();
    Ok(better + 1)
}

pub fn probe_ranks(scores: &ScoreMatrix, truth: &[u32]) -> Result<Vec<usize>> {
    if truth.len() != scores.n_probes() {
        return Err(invalid(format!(
            "{} truth labels for {} probes",
            truth.len(),
            scores.n_probes()
        )));
    }
    scores
        .scores
        .iter()
        .zip(truth)
        .map(|(row, &t)| rank_of(&scores.classes, row, t))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    /// `accuracy[r - 1]` is the fraction of probes with rank <= r.
    pub accuracy: Vec<f64>,
}

impl CmcCurve {
    pub fn from_ranks(ranks: &[usize], n_classes: usize) -> Self {
        let mut hist = vec![0usize; n_classes + 1];
        for &r in ranks {
            hist[r.min(n_classes)] += 1;
        }
        let n = ranks.len().max(1) as f64;
        let mut acc = 0usize;
        let accuracy = (1..=n_classes)
            .map(|r| {
                acc += hist[r];
                if ranks.is_empty() {
                    1.0
                } else {
                    acc as f64 / n
                }
            })
            .collect();
        Self { accuracy }
    }

    pub fn at(&self, r: usize) -> f64 {
        self.accuracy[r.clamp(1, self.accuracy.len()) - 1]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rank", "accuracy"])?;
        for (r, a) in self.accuracy.iter().enumerate() {
            w.write_record([(r + 1).to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// A static line plot of the curve.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, m) = (480.0, 320.0, 40.0);
        let n = self.accuracy.len().max(2) as f64;
        let x = |r: f64| m + (r - 1.0) / (n - 1.0) * (w - 2.0 * m);
        let y = |a: f64| h - m - a * (h - 2.0 * m);
        let pts: Vec<String> = self
            .accuracy
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{:.2},{:.2}", x(i as f64 + 1.0), y(*a)))
            .collect();
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{m},{m} L{m},{b} L{r},{b}" stroke="black" fill="none"/>"#,
            b = h - m,
            r = w - m
        );
        for a in [0.0, 0.5, 1.0] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{a:.1}</text>"#,
                m - 4.0,
                y(a) + 3.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">rank (1..{})</text>"#,
            w / 2.0,
            h - 10.0,
            self.accuracy.len()
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-size="12" text-anchor="middle">{}</text>"#,
            w / 2.0,
            xml_escape(title)
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#,
            pts.join(" ")
        );
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn cmc(scores: &ScoreMatrix, truth: &[u32]) -> Result<CmcCurve> {
    let ranks = probe_ranks(scores, truth)?;
    Ok(CmcCurve::from_ranks(&ranks, scores.classes.len()))
}

/// Genuine and impostor similarity scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScorePair {
    /// Each probe's score for its own class is genuine, for every other
    /// class impostor.
    pub fn from_scores(scores: &ScoreMatrix, truth: &[u32]) -> Self {
        let mut p = Self::default();
        for (row, &t) in scores.scores.iter().zip(truth) {
            for (&c, &v) in scores.classes.iter().zip(row) {
                if c == t {
                    p.genuine.push(v);
                } else {
                    p.impostor.push(v);
                }
            }
        }
        p
    }
}

pub const EER_PAIRING: &str = "genuine: probe vs own class; impostor: probe vs every other gallery class";

/// Equal error rate in percent. Thresholds are the sorted union of scores
/// plus +inf; FAR(t) = P(impostor >= t), FRR(t) = P(genuine < t).
pub fn eer(pairs: &ScorePair) -> Result<f64> {
    if pairs.genuine.is_empty() || pairs.impostor.is_empty() {
        return Err(invalid("EER needs genuine and impostor scores"));
    }
    let mut g = pairs.genuine.clone();
    let mut im = pairs.impostor.clone();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let mut ts: Vec<f64> = g.iter().chain(&im).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let rates = |t: f64| {
        let far = (im.len() - im.partition_point(|&v| v < t)) as f64 / ni;
        let frr = g.partition_point(|&v| v < t) as f64 / ng;
        (far, frr)
    };
    let mut prev = rates(ts[0]);
    if prev.0 - prev.1 <= 0.0 {
        return Ok(100.0 * prev.0);
    }
    for &t in &ts[1..] {
        let cur = rates(t);
        let d = cur.0 - cur.1;
        if d <= 0.0 {
            if d == 0.0 {
                return Ok(100.0 * cur.0);
            }
            let d0 = prev.0 - prev.1;
            let lam = d0 / (d0 - d);
            return Ok(100.0 * (prev.0 + lam * (cur.0 - prev.0)));
        }
        prev = cur;
    }
    unreachable!("FAR - FRR is -1 at the +inf threshold")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NTrainSamples,
    ImageSide,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exactly,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub probe_id: String,
    pub palm_id: u32,
    pub rank: usize,
    pub n_train: usize,
    pub side: usize,
}

/// Rank-1 accuracy over the probes matching the predicate; `None` when no
/// probe matches.
pub fn acc_conditional(probes: &[ProbeRecord], axis: Axis, x: usize, mode: Mode) -> Option<f64> {
    let sel: Vec<&ProbeRecord> = probes
        .iter()
        .filter(|p| {
            let v = match axis {
                Axis::NTrainSamples => p.n_train,
                Axis::ImageSide => p.side,
            };
            match mode {
                Mode::Exactly => v == x,
                Mode::AtLeast => v >= x,
            }
        })
        .collect();
    if sel.is_empty() {
        return None;
    }
    Some(sel.iter().filter(|p| p.rank == 1).count() as f64 / sel.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRow {
    pub x: usize,
    pub exactly: Option<f64>,
    pub at_least: Option<f64>,
    pub n_exactly: usize,
    pub n_at_least: usize,
}

pub const SIDE_THRESHOLDS: [usize; 8] = [40, 64, 96, 128, 160, 192, 224, 256];

pub fn conditional_table(probes: &[ProbeRecord], axis: Axis, xs: &[usize]) -> Vec<ConditionalRow> {
    let value = |p: &ProbeRecord| match axis {
        Axis::NTrainSamples => p.n_train,
        Axis::ImageSide => p.side,
    };
    xs.iter()
        .map(|&x| ConditionalRow {
            x,
            exactly: acc_conditional(probes, axis, x, Mode::Exactly),
            at_least: acc_conditional(probes, axis, x, Mode::AtLeast),
            n_exactly: probes.iter().filter(|p| value(p) == x).count(),
            n_at_least: probes.iter().filter(|p| value(p) >= x).count(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classifier: String,
    pub n_gallery_classes: usize,
    pub n_probes: usize,
    pub rank1: f64,
    pub rank30: f64,
    pub cmc: Vec<f64>,
    pub eer: Option<f64>,
    pub eer_pairing: String,
    pub acc_n: Vec<ConditionalRow>,
    pub acc_l: Vec<ConditionalRow>,
    pub per_probe: Vec<ProbeRecord>,
    pub seed: u64,
    pub config_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

impl EvaluationReport {
    /// `meta[i] = (n_train, side)` for probe `i`.
    pub fn build(
        scores: &ScoreMatrix,
        truth: &[u32],
        meta: &[(usize, usize)],
        seed: u64,
        config_hash: String,
    ) -> Result<Self> {
        let ranks = probe_ranks(scores, truth)?;
        if meta.len() != ranks.len() {
            return Err(invalid("probe metadata does not match the score matrix"));
        }
        let n_classes = scores.classes.len();
        let curve = CmcCurve::from_ranks(&ranks, n_classes);
        let per_probe: Vec<ProbeRecord> = ranks
            .iter()
            .enumerate()
            .map(|(i, &rank)| ProbeRecord {
                probe_id: scores.probe_ids[i].clone(),
                palm_id: truth[i],
                rank,
                n_train: meta[i].0,
                side: meta[i].1,
            })
            .collect();
        let pairs = ScorePair::from_scores(scores, truth);
        let eer = if pairs.genuine.is_empty() || pairs.impostor.is_empty() {
            None
        } else {
            Some(eer(&pairs)?)
        };
        let max_n = per_probe.iter().map(|p| p.n_train).max().unwrap_or(0);
        let ns: Vec<usize> = (1..=max_n).collect();
        Ok(Self {
            classifier: scores.tag.clone(),
            n_gallery_classes: n_classes,
            n_probes: ranks.len(),
            rank1: curve.at(1),
            rank30: curve.at(30),
            acc_n: conditional_table(&per_probe, Axis::NTrainSamples, &ns),
            acc_l: conditional_table(&per_probe, Axis::ImageSide, &SIDE_THRESHOLDS),
            cmc: curve.accuracy,
            eer,
            eer_pairing: EER_PAIRING.into(),
            per_probe,
            seed,
            config_hash,
        })
    }

    pub fn curve(&self) -> CmcCurve {
        CmcCurve {
            accuracy: self.cmc.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the JSON serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    /// Writes `report.json`, `cmc.csv`, `cmc.svg` and `ranks.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        let curve = self.curve();
        curve.write_csv(&dir.join("cmc.csv"))?;
        std::fs::write(dir.join("cmc.svg"), curve.to_svg(&format!("CMC ({})", self.classifier)))?;
        let mut w = csv::Writer::from_path(dir.join("ranks.csv"))?;
        w.write_record(["probe_id", "palm_id", "rank", "n_train", "side"])?;
        for p in &self.per_probe {
            w.write_record([
                p.probe_id.clone(),
                p.palm_id.to_string(),
                p.rank.to_string(),
                p.n_train.to_string(),
                p.side.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(classes: Vec<u32>, scores: Vec<Vec<f64>>) -> ScoreMatrix {
        ScoreMatrix {
            tag: "t".into(),
            probe_ids: (0..scores.len()).map(|i| i.to_string()).collect(),
            classes,
            scores,
        }
    }

    #[test]
    fn internet_split_counts() {
        let palms = [1, 1, 1, 1, 2, 2, 2, 2, 2, 3];
        let mut rng = RngState::from_seed(3);
        let s = make_split_internetstyle(&palms, &mut rng).unwrap();
        assert_eq!(s.train_count(1), 2);
        assert_eq!(s.train_count(2), 3);
        assert_eq!(s.train_count(3), 1);
        assert!(s.distractor[9] && !s.distractor[0]);
        assert_eq!(s.probe_indices().len(), 4);
        let again = make_split_internetstyle(&palms, &mut RngState::from_seed(3)).unwrap();
        assert_eq!(s, again);
        assert!(make_split_internetstyle(&[], &mut rng).is_err());
    }

    #[test]
    fn firstk_split() {
        let mut palms = vec![5; 10];
        palms.extend([6; 4]);
        let s = make_split_firstk(&palms, 4).unwrap();
        assert_eq!(s.train_indices(), vec![0, 1, 2, 3, 10, 11, 12, 13]);
        assert!(s.distractor[10] && !s.distractor[0]);
        assert!(make_split_firstk(&palms, 0).is_err());
    }

    #[test]
    fn cmc_examples() {
        let m = matrix(vec![0, 1], vec![vec![0.9, 0.1], vec![0.4, 0.6]]);
        assert_eq!(probe_ranks(&m, &[0, 0]).unwrap(), vec![1, 2]);
        assert_eq!(cmc(&m, &[0, 0]).unwrap().accuracy, vec![0.5, 1.0]);
        assert!(cmc(&m, &[7, 0]).is_err());
        let tie = matrix(vec![3, 8], vec![vec![0.5, 0.5]]);
        assert_eq!(probe_ranks(&tie, &[3]).unwrap(), vec![1]);
        assert_eq!(probe_ranks(&tie, &[8]).unwrap(), vec![2]);
    }

    #[test]
    fn eer_examples() {
        let p = |g: &[f64], i: &[f64]| ScorePair {
            genuine: g.to_vec(),
            impostor: i.to_vec(),
        };
        assert_eq!(eer(&p(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 0.0);
        assert!((eer(&p(&[0.3, 0.5, 0.7], &[0.7, 0.3, 0.5])).unwrap() - 50.0).abs() < 1e-9);
        assert!((eer(&p(&[0.6, 0.4], &[0.5, 0.3])).unwrap() - 50.0).abs() < 1e-9);
        assert!(eer(&p(&[], &[0.1])).is_err());
    }

    #[test]
    fn conditional_accuracy_by_hand() {
        let rec = |rank, n_train, side| ProbeRecord {
            probe_id: String::new(),
            palm_id: 0,
            rank,
            n_train,
            side,
        };
        let probes = [rec(1, 1, 50), rec(3, 2, 120), rec(1, 3, 200)];
        assert_eq!(acc_conditional(&probes, Axis::NTrainSamples, 1, Mode::AtLeast), Some(2.0 / 3.0));
        assert_eq!(acc_conditional(&probes, Axis::NTrainSamples, 2, Mode::Exactly), Some(0.0));
        assert_eq!(acc_conditional(&probes, Axis::NTrainSamples, 2, Mode::AtLeast), Some(0.5));
        assert_eq!(acc_conditional(&probes, Axis::ImageSide, 100, Mode::AtLeast), Some(0.5));
        assert_eq!(acc_conditional(&probes, Axis::ImageSide, 300, Mode::AtLeast), None);
    }

    #[test]
    fn report_invariants_and_files() {
        let m = matrix(
            vec![0, 1, 2],
            vec![vec![0.9, 0.1, 0.0], vec![0.4, 0.6, 0.1], vec![0.2, 0.3, 0.1]],
        );
        let r = EvaluationReport::build(&m, &[0, 0, 2], &[(2, 60), (2, 100), (1, 80)], 4, "h".into()).unwrap();
        assert_eq!(r.rank1, r.cmc[0]);
        assert_eq!(r.rank30, *r.cmc.last().unwrap());
        assert_eq!(Some(r.rank1), acc_conditional(&r.per_probe, Axis::NTrainSamples, 1, Mode::AtLeast));
        let dir = tempfile::tempdir().unwrap();
        r.write_all(dir.path()).unwrap();
        for f in ["report.json", "cmc.csv", "cmc.svg", "ranks.csv"] {
            assert!(dir.path().join(f).exists());
        }
        let back: EvaluationReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back.hash().unwrap(), r.hash().unwrap());
    }

    proptest! {
        #[test]
        fn cmc_monotone_and_rank_invariant(seed in 0u64..1000) {
            let mut rng = RngState::from_seed(seed);
            let classes: Vec<u32> = (0..6).collect();
            let scores: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..6).map(|_| (rng.uniform() * 4.0).floor()).collect())
                .collect();
            let truth: Vec<u32> = (0..8).map(|_| rng.below(6) as u32).collect();
            let m = matrix(classes.clone(), scores.clone());
            let c = cmc(&m, &truth).unwrap();
            prop_assert!(c.accuracy.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*c.accuracy.last().unwrap(), 1.0);
            let warped = matrix(classes, scores.iter().map(|r| r.iter().map(|v| v.exp() * 3.0 - 1.0).collect()).collect());
            prop_assert_eq!(cmc(&warped, &truth).unwrap(), c);
        }

        #[test]
        fn eer_shift_invariant(seed in 0u64..1000, shift in -5.0f64..5.0) {
            let mut rng = RngState::from_seed(seed);
            let g: Vec<f64> = (0..7).map(|_| (rng.normal() * 4.0).round() / 4.0 + 1.0).collect();
            let i: Vec<f64> = (0..11).map(|_| (rng.normal() * 4.0).round() / 4.0).collect();
            let a = eer(&ScorePair { genuine: g.clone(), impostor: i.clone() }).unwrap();
            let b = eer(&ScorePair {
                genuine: g.iter().map(|v| v + shift).collect(),
                impostor: i.iter().map(|v| v + shift).collect(),
            }).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&a));
        }

        #[test]
        fn splits_partition_the_dataset(seed in 0u64..500) {
            let mut rng = RngState::from_seed(seed);
            let palms: Vec<u32> = (0..40).map(|_| rng.below(9) as u32).collect();
            let s = make_split_internetstyle(&palms, &mut rng).unwrap();
            let mut all = s.train_indices();
            all.extend(s.probe_indices());
            all.sort_unstable();
            prop_assert_eq!(all, (0..40).collect::<Vec<_>>());
            for i in s.probe_indices() {
                prop_assert!(s.train_count(palms[i]) >= 1);
            }
        }
    }
}
