//! Training schedules: localizer pretraining (Stage I), ROI-only training
//! (S0 and its variants) and end-to-end training (S1-S5), with the
//! per-epoch freeze, dropout and augmentation calendar.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndgrad::rng::derive_seed;
use ndgrad::param::Bound;
use ndgrad::{AdamConfig, AdamState, Graph, Parameter, RngState, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_at, augment_ct, AtOp, CtRanges};
use crate::dataset::Sample;
use crate::error::{invalid, Error, Result};
use crate::eval::config_hash;
use crate::image::Image;
use crate::landmarks::{nme, LandmarkSet};
use crate::nets::{Arch, BackboneConfig, Block, DropoutSwitches, Model};
use crate::tps::extract_roi;

pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_MICRO_BATCH: usize = 16;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_D_LR: f64 = 0.001;
/// Block D is tuned from the epoch after this one.
pub const D_FROZEN_UNTIL: usize = 20;
/// Last epoch with head dropout in S5.
pub const S5_DROPOUT_UNTIL: usize = 35;
pub const RECIPE_EPOCHS: usize = 60;
pub const RECIPE_AT_FROM: usize = 41;

/// Inclusive epoch range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub from: usize,
    pub to: usize,
}

impl Window {
    pub fn new(from: usize, to: usize) -> Self {
        Self { from, to }
    }

    pub fn contains(self, epoch: usize) -> bool {
        (self.from..=self.to).contains(&epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    S0,
    S1,
    S2,
    S3,
    S4,
    S5,
    S0h,
    S0nct,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::S0,
        Strategy::S1,
        Strategy::S2,
        Strategy::S3,
        Strategy::S4,
        Strategy::S5,
        Strategy::S0h,
        Strategy::S0nct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::S0 => "S0",
            Strategy::S1 => "S1",
            Strategy::S2 => "S2",
            Strategy::S3 => "S3",
            Strategy::S4 => "S4",
            Strategy::S5 => "S5",
            Strategy::S0h => "S0h",
            Strategy::S0nct => "S0nct",
        }
    }

    /// Localizer and FERnet trained as one network.
    pub fn end_to_end(self) -> bool {
        matches!(
            self,
            Strategy::S1 | Strategy::S2 | Strategy::S3 | Strategy::S4 | Strategy::S5
        )
    }

    pub fn needs_localizer(self) -> bool {
        self != Strategy::S0h
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown strategy {s:?}")))
    }
}

/// Drop1/Drop2 schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadDropout {
    Off,
    On,
    OnUntil(usize),
}

impl HeadDropout {
    pub fn on(self, epoch: usize) -> bool {
        match self {
            HeadDropout::Off => false,
            HeadDropout::On => true,
            HeadDropout::OnUntil(last) => epoch <= last,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub d_lr: f64,
    pub batch: usize,
    pub micro_batch: usize,
    pub c_window: Window,
    pub d_window: Option<Window>,
    pub head_dropout: HeadDropout,
    pub ct: Option<Window>,
    pub at: Option<Window>,
    pub ct_ranges: CtRanges,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, epochs: usize, seed: u64) -> Result<Self> {
        use Strategy::*;
        if epochs == 0 {
            return Err(invalid("a strategy needs at least one epoch"));
        }
        if strategy == S5 && epochs <= S5_DROPOUT_UNTIL {
            return Err(invalid(format!(
                "S5 switches dropout off after epoch {S5_DROPOUT_UNTIL}, so it needs more epochs than that (got {epochs})"
            )));
        }
        let head_dropout = match strategy {
            S2 | S4 => HeadDropout::On,
            S5 => HeadDropout::OnUntil(S5_DROPOUT_UNTIL),
            _ => HeadDropout::Off,
        };
        let d_window = (matches!(strategy, S3 | S4 | S5) && epochs > D_FROZEN_UNTIL)
            .then(|| Window::new(D_FROZEN_UNTIL + 1, epochs));
        let all = Window::new(1, epochs);
        Ok(Self {
            strategy,
            epochs,
            seed,
            lr: DEFAULT_LR,
            d_lr: DEFAULT_D_LR,
            batch: DEFAULT_BATCH,
            micro_batch: DEFAULT_MICRO_BATCH,
            c_window: all,
            d_window,
            head_dropout,
            ct: (strategy != S0nct).then_some(all),
            at: None,
            ct_ranges: CtRanges::default(),
        })
    }

    /// S5 for 60 epochs with `ct` throughout and `at` added from epoch 41;
    /// with `grayscale`, `at` replaces `ct` on every epoch.
    pub fn final_recipe(seed: u64, grayscale: bool) -> Self {
        let mut cfg = Self::new(Strategy::S5, RECIPE_EPOCHS, seed).expect("valid recipe");
        if grayscale {
            cfg.ct = None;
            cfg.at = Some(Window::new(1, RECIPE_EPOCHS));
        } else {
            cfg.at = Some(Window::new(RECIPE_AT_FROM, RECIPE_EPOCHS));
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.epochs;
        let windows = [Some(self.c_window), self.d_window, self.ct, self.at];
        for w in windows.into_iter().flatten() {
            if w.from < 1 || w.to > n || w.from > w.to + 1 {
                return Err(invalid(format!(
                    "epoch window [{}, {}] outside [1, {n}]",
                    w.from, w.to
                )));
            }
        }
        if let HeadDropout::OnUntil(e) = self.head_dropout {
            if e >= n {
                return Err(invalid(format!("dropout switch epoch {e} must precede the last epoch {n}")));
            }
        }
        if self.batch == 0 || self.micro_batch == 0 {
            return Err(invalid("batch sizes must be positive"));
        }
        if !(self.lr > 0.0 && self.d_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        Ok(())
    }

    pub fn c_trainable(&self, epoch: usize) -> bool {
        self.c_window.contains(epoch)
    }

    pub fn d_trainable(&self, epoch: usize) -> bool {
        self.d_window.is_some_and(|w| w.contains(epoch))
    }

    pub fn head_dropout_on(&self, epoch: usize) -> bool {
        self.strategy.end_to_end() && self.head_dropout.on(epoch)
    }

    pub fn ct_on(&self, epoch: usize) -> bool {
        self.ct.is_some_and(|w| w.contains(epoch))
    }

    pub fn at_on(&self, epoch: usize) -> bool {
        self.at.is_some_and(|w| w.contains(epoch))
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Held-out NME in Stage I, training accuracy otherwise.
    pub metric: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRunLog {
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<EpochRecord>,
}

impl TrainRunLog {
    fn push(&mut self, loss: f64, metric: f64, seconds: f64) {
        self.rows.push(EpochRecord {
            epoch: self.rows.len() + 1,
            loss,
            metric,
            seconds,
        });
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "metric", "seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.metric.to_string(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-channel mean of a set of images.
pub fn mean_rgb<'a>(images: impl IntoIterator<Item = &'a Image>) -> [f32; 3] {
    let mut acc = [0.0f64; 3];
    let mut n = 0usize;
    for img in images {
        let m = img.mean_per_channel();
        for c in 0..3 {
            acc[c] += m[c.min(m.len() - 1)];
        }
        n += 1;
    }
    if n == 0 {
        return [0.0; 3];
    }
    acc.map(|v| (v / n as f64) as f32)
}

fn stack(images: &[Image], mean: [f32; 3]) -> Result<Tensor<f32>> {
    let parts: Vec<Tensor<f32>> = images.iter().map(|i| i.to_tensor(mean)).collect();
    Ok(Tensor::stack_batch(&parts)?)
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> RngState {
    RngState::new(derive_seed(&[seed, epoch as u64, index as u64]), 0)
}

fn batch_size(requested: usize, n: usize) -> usize {
    requested.min(n).max(1)
}

fn argmax_hits(g: &Graph<f32>, logits: Var, labels: &[usize]) -> usize {
    let v = g.value(logits);
    let c = v.shape()[1];
    v.data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = (0..c)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            best == l
        })
        .count()
}

/// One optimizer step over `batch`, split into micro-batches whose mean
/// losses are reweighted by their share of the batch. `f` returns the
/// micro-batch mean loss and a hit count. Returns the summed loss and hits.
fn train_batch<F>(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    batch: &[usize],
    micro: usize,
    lr_of: &dyn Fn(&Parameter<f32>) -> f64,
    mut f: F,
) -> Result<(f64, usize)>
where
    F: FnMut(&mut Graph<f32>, &Bound, &Model<f32>, &[usize]) -> Result<(Var, usize)>,
{
    let mut acc = vec![None; model.store.len()];
    let (mut total, mut hits) = (0.0, 0);
    for chunk in batch.chunks(micro) {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let (loss, h) = f(&mut g, &p, model, chunk)?;
        let lv = f64::from(g.value(loss).item());
        if !lv.is_finite() {
            return Err(invalid(format!("training loss became {lv}")));
        }
        total += lv * chunk.len() as f64;
        hits += h;
        let scaled = g.weighted_sum(loss, &[chunk.len() as f32 / batch.len() as f32])?;
        let grads = g.backward(scaled)?;
        p.accumulate(&grads, &mut acc);
    }
    adam.step(&mut model.store, &acc, lr_of);
    Ok((total, hits))
}

/// The localizer input: the image resized to the network's input side.
pub fn prepare_input56(image: &Image, side: usize) -> Image {
    image.resize(side, side)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub epochs_a: usize,
    pub epochs_ab: usize,
    pub batch: usize,
    pub micro_batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub backbone: BackboneConfig,
    /// Fraction of palms held out to measure NME.
    pub holdout_fraction: f64,
    /// Randomly rotated segmented copies per sample.
    pub random_rotations: usize,
}

impl Stage1Config {
    pub fn new(seed: u64, backbone: BackboneConfig) -> Self {
        Self {
            epochs_a: 10,
            epochs_ab: 15,
            batch: DEFAULT_BATCH,
            micro_batch: 32,
            lr: DEFAULT_LR,
            seed,
            backbone,
            holdout_fraction: 0.2,
            random_rotations: 3,
        }
    }
}

pub struct Stage1Outcome {
    pub model: Model<f32>,
    pub log: TrainRunLog,
    pub initial_nme: f64,
    pub final_nme: f64,
    pub holdout_palms: Vec<u32>,
}

/// Variants of [`localizer_variants`] that are the same every epoch.
pub const FIXED_VARIANTS: usize = 5;

/// Training copies of one annotated sample: the original and its segmented
/// version, the original turned by 90, 180 and 270 degrees, and segmented
/// copies turned by random angles.
pub fn localizer_variants(
    sample: &Sample,
    side: usize,
    random_rotations: usize,
    rng: &mut RngState,
) -> Result<Vec<(Image, LandmarkSet)>> {
    let lm = sample
        .landmarks
        .ok_or_else(|| Error::Precondition(format!("{} has no landmarks", sample.path)))?;
    let orig = prepare_input56(&sample.image, side);
    let seg = sample
        .segmented()
        .map(|s| prepare_input56(&s, side))
        .unwrap_or_else(|| orig.clone());
    let mut out = vec![(orig.clone(), lm), (seg.clone(), lm)];
    let quarter = AtOp::Rotate(90.0);
    let (mut img, mut l) = (orig, lm);
    for _ in 0..3 {
        img = quarter.apply(&img);
        l = quarter.apply_landmarks(&l);
        out.push((img.clone(), l));
    }
    for _ in 0..random_rotations {
        let op = AtOp::Rotate(rng.uniform_range(-180.0, 180.0));
        out.push((op.apply(&seg), op.apply_landmarks(&lm)));
    }
    Ok(out)
}

fn mean_nme(model: &Model<f32>, inputs: &[Image], truth: &[LandmarkSet]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(f64::NAN);
    }
    let loc = model.localizer()?;
    let mut total = 0.0;
    let mut rng = RngState::from_seed(0);
    for (imgs, gts) in inputs.chunks(32).zip(truth.chunks(32)) {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let x = g.input(stack(imgs, model.arch.mean_rgb)?);
        let out = loc.forward(&mut g, &p, x, false, &mut rng)?;
        let v = g.value(out).data();
        for (k, gt) in gts.iter().enumerate() {
            let flat: Vec<f64> = v[k * 18..(k + 1) * 18].iter().map(|&a| f64::from(a)).collect();
            total += nme(&LandmarkSet::from_flat(&flat)?, gt);
        }
    }
    Ok(total / inputs.len() as f64)
}

/// Stage I: the regression head alone (block A) for `epochs_a` epochs on
/// cached backbone features, then head and backbone (A and B) together for
/// `epochs_ab` epochs, with an L2 loss on the 18 normalized coordinates.
/// The random-angle copies are redrawn every joint epoch. Left hands are
/// mirrored first.
pub fn stage1_train_localizer(samples: &[Sample], cfg: &Stage1Config) -> Result<Stage1Outcome> {
    if samples.is_empty() || samples.iter().any(|s| s.landmarks.is_none()) {
        return Err(Error::Precondition(
            "localizer training needs landmark annotations for every image".into(),
        ));
    }
    if cfg.batch == 0 || cfg.micro_batch == 0 || !(cfg.lr > 0.0) {
        return Err(invalid("batch sizes and learning rate must be positive"));
    }
    let samples: Vec<Sample> = samples.iter().map(Sample::to_right_hand).collect();
    let mut palms: Vec<u32> = samples.iter().map(|s| s.palm_id).collect();
    palms.sort_unstable();
    palms.dedup();
    let mut split_rng = RngState::new(derive_seed(&[cfg.seed, 0x5B17]), 0);
    split_rng.shuffle(&mut palms);
    let n_hold = ((palms.len() as f64 * cfg.holdout_fraction).round() as usize).min(palms.len() - 1);
    let mut holdout_palms = palms[..n_hold].to_vec();
    holdout_palms.sort_unstable();

    let arch0 = Arch::new(cfg.backbone);
    let side = arch0.input_side;
    let mut train = Vec::new();
    let mut originals = Vec::new();
    // Random-angle copies are redrawn every joint epoch from the segmented
    // image; `redraw[i]` points at that image.
    let (mut segs, mut redraw) = (Vec::new(), Vec::new());
    let (mut hold_x, mut hold_y) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if holdout_palms.binary_search(&s.palm_id).is_ok() {
            hold_x.push(prepare_input56(&s.image, side));
            hold_y.push(s.landmarks.expect("checked above"));
            continue;
        }
        let mut rng = RngState::new(derive_seed(&[cfg.seed, 0xA06, i as u64]), 0);
        let v = localizer_variants(s, side, cfg.random_rotations, &mut rng)?;
        originals.push(v[0].clone());
        for k in 0..v.len() {
            redraw.push((k >= FIXED_VARIANTS).then_some(segs.len()));
        }
        segs.push(v[1].clone());
        train.extend(v);
    }
    if hold_x.is_empty() {
        for (img, l) in &originals {
            hold_x.push(img.clone());
            hold_y.push(*l);
        }
    }
    let arch = Arch {
        mean_rgb: mean_rgb(originals.iter().map(|(i, _)| i)),
        meta: serde_json::json!({ "stage": "I", "seed": cfg.seed }),
        ..arch0
    };
    let mut model = Model::<f32>::new(arch, derive_seed(&[cfg.seed, 1]))?;
    let mean = model.arch.mean_rgb;
    let inputs: Vec<Tensor<f32>> = train.iter().map(|(i, _)| i.to_tensor(mean)).collect();
    let targets: Vec<[f32; 18]> = train
        .iter()
        .map(|(_, l)| l.to_flat().map(|v| v as f32))
        .collect();

    let mut log = TrainRunLog {
        seed: cfg.seed,
        config_hash: config_hash(cfg)?,
        rows: Vec::new(),
    };
    let initial_nme = mean_nme(&model, &hold_x, &hold_y)?;
    let mut adam = AdamState::new(&model.store, AdamConfig::default());
    let lr = cfg.lr;
    let lr_of = move |_: &Parameter<f32>| lr;
    let n = train.len();
    let bs = batch_size(cfg.batch, n);
    let loc = model.localizer()?.clone();

    let target_batch = |chunk: &[usize]| -> Result<Tensor<f32>> {
        let data: Vec<f32> = chunk.iter().flat_map(|&i| targets[i]).collect();
        Ok(Tensor::new(&[chunk.len(), 18], data)?)
    };

    if cfg.epochs_a > 0 {
        model.set_all_trainable(false);
        model.set_block_trainable(Block::A, true);
        let mut feats: Vec<Tensor<f32>> = Vec::with_capacity(n);
        for chunk in inputs.chunks(cfg.micro_batch) {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g);
            let x = g.input(Tensor::stack_batch(chunk)?);
            let f = loc.features(&mut g, &p, x)?;
            let v = g.value(f);
            for k in 0..chunk.len() {
                feats.push(v.batch_item(k));
            }
        }
        for epoch in 1..=cfg.epochs_a {
            let t0 = Instant::now();
            let order = epoch_order(cfg.seed, epoch, n);
            let mut total = 0.0;
            for batch in order.chunks(bs) {
                let (l, _) = train_batch(&mut model, &mut adam, batch, cfg.micro_batch, &lr_of, |g, p, _, chunk| {
                    let parts: Vec<Tensor<f32>> = chunk.iter().map(|&i| feats[i].clone()).collect();
                    let x = g.input(Tensor::stack_batch(&parts)?);
                    let x = g.flatten(x)?;
                    let mut rng = sample_rng(cfg.seed, epoch, chunk[0] + 0xD000_0000);
                    let y = loc.head(g, p, x, true, &mut rng)?;
                    let t = g.input(target_batch(chunk)?);
                    Ok((g.l2_loss(y, t)?, 0))
                })?;
                total += l;
            }
            let metric = mean_nme(&model, &hold_x, &hold_y)?;
            log.push(total / n as f64, metric, t0.elapsed().as_secs_f64());
            log::info!("stage I-A epoch {epoch}: loss {:.5} nme {:.3}%", total / n as f64, metric);
        }
    }

    model.set_all_trainable(false);
    model.set_block_trainable(Block::A, true);
    model.set_block_trainable(Block::B, true);
    for e in 1..=cfg.epochs_ab {
        let epoch = cfg.epochs_a + e;
        let t0 = Instant::now();
        let order = epoch_order(cfg.seed, epoch, n);
        let mut total = 0.0;
        for batch in order.chunks(bs) {
            let (l, _) = train_batch(&mut model, &mut adam, batch, cfg.micro_batch, &lr_of, |g, p, _, chunk| {
                let mut parts = Vec::with_capacity(chunk.len());
                let mut ts = Vec::with_capacity(chunk.len() * 18);
                for &i in chunk {
                    match redraw[i] {
                        Some(k) => {
                            let mut rng = sample_rng(cfg.seed, epoch, i);
                            let op = AtOp::Rotate(rng.uniform_range(-180.0, 180.0));
                            parts.push(op.apply(&segs[k].0).to_tensor(mean));
                            ts.extend(op.apply_landmarks(&segs[k].1).to_flat().map(|v| v as f32));
                        }
                        None => {
                            parts.push(inputs[i].clone());
                            ts.extend(targets[i]);
                        }
                    }
                }
                let x = g.input(Tensor::stack_batch(&parts)?);
                let mut rng = sample_rng(cfg.seed, epoch, chunk[0] + 0xD000_0000);
                let y = loc.forward(g, p, x, true, &mut rng)?;
                let t = g.input(Tensor::new(&[chunk.len(), 18], ts)?);
                Ok((g.l2_loss(y, t)?, 0))
            })?;
            total += l;
        }
        let metric = mean_nme(&model, &hold_x, &hold_y)?;
        log.push(total / n as f64, metric, t0.elapsed().as_secs_f64());
        log::info!("stage I-AB epoch {epoch}: loss {:.5} nme {:.3}%", total / n as f64, metric);
    }
    model.set_all_trainable(true);
    let final_nme = mean_nme(&model, &hold_x, &hold_y)?;
    Ok(Stage1Outcome {
        model,
        log,
        initial_nme,
        final_nme,
        holdout_palms,
    })
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(derive_seed(&[seed, epoch as u64, 0x0BDE]), 0).shuffle(&mut order);
    order
}

/// The image FERnet sees for one (right-handed) sample in eval mode.
pub fn fernet_input(model: &Model<f32>, image: &Image) -> Result<Image> {
    let side = model.arch.roi_side;
    if model.arch.hand_input {
        return Ok(image.resize(side, side));
    }
    let mut rng = RngState::from_seed(0);
    let lm = model.localize(&prepare_input56(image, model.arch.input_side), false, &mut rng)?;
    extract_roi(image, &lm, side, side)
}

/// Descriptor and logits of one right-handed image, eval mode.
pub fn describe(model: &Model<f32>, image: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
    model.forward_fernet(&fernet_input(model, image)?)
}

/// Recognition training for one strategy on samples whose palm ids all
/// appear in `classes` (ascending; the logit order). `backbone` sizes
/// FERnet; the localizer keeps the widths it was trained with.
pub fn train_strategy(
    cfg: &StrategyConfig,
    samples: &[Sample],
    classes: &[u32],
    localizer: Option<&Model<f32>>,
    backbone: BackboneConfig,
) -> Result<(Model<f32>, TrainRunLog)> {
    cfg.validate()?;
    let strategy = cfg.strategy;
    if strategy.needs_localizer() && localizer.is_none() {
        return Err(Error::Precondition(format!(
            "strategy {strategy} needs a pretrained localizer"
        )));
    }
    if samples.is_empty() {
        return Err(invalid("no training samples"));
    }
    if classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("class ids must be strictly ascending"));
    }
    let labels = samples
        .iter()
        .map(|s| {
            classes
                .binary_search(&s.palm_id)
                .map_err(|_| invalid(format!("palm {} is not a gallery class", s.palm_id)))
        })
        .collect::<Result<Vec<usize>>>()?;
    let samples: Vec<Sample> = samples.iter().map(Sample::to_right_hand).collect();

    let mut arch = Arch::new(localizer.map_or(backbone, |l| l.arch.backbone));
    arch.fer_backbone = Some(backbone);
    arch.has_localizer = strategy.needs_localizer();
    arch.hand_input = strategy == Strategy::S0h;
    arch.n_class = Some(classes.len());
    arch.classes = classes.to_vec();
    arch.meta = serde_json::json!({
        "strategy": strategy.as_str(),
        "epochs": cfg.epochs,
        "seed": cfg.seed,
    });
    let side = arch.roi_side;
    let base: Vec<Image> = match strategy {
        Strategy::S0h => samples.iter().map(|s| s.image.resize(side, side)).collect(),
        _ if strategy.end_to_end() => samples.iter().map(|s| s.image.clone()).collect(),
        _ => {
            let loc = localizer.expect("checked above");
            samples
                .iter()
                .map(|s| fernet_input(loc, &s.image))
                .collect::<Result<_>>()?
        }
    };
    arch.mean_rgb = match localizer {
        Some(l) => l.arch.mean_rgb,
        None => mean_rgb(&base),
    };
    let mut model = Model::<f32>::new(arch, derive_seed(&[cfg.seed, 0xFE]))?;
    if let (true, Some(l)) = (model.arch.has_localizer, localizer) {
        model.copy_localizer_from(l)?;
    }
    let mean = model.arch.mean_rgb;
    let input_side = model.arch.input_side;

    let mut log = TrainRunLog {
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        rows: Vec::new(),
    };
    let mut adam = AdamState::new(&model.store, AdamConfig::default());
    let (lr, d_lr) = (cfg.lr, cfg.d_lr);
    let lr_of = move |p: &Parameter<f32>| if Block::D.contains(&p.name) { d_lr } else { lr };
    let n = base.len();
    let bs = batch_size(cfg.batch, n);
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        model.set_all_trainable(false);
        model.set_block_trainable(Block::C, cfg.c_trainable(epoch));
        if strategy.end_to_end() {
            model.set_block_trainable(Block::D, cfg.d_trainable(epoch));
        }
        let (ct, at) = (cfg.ct_on(epoch), cfg.at_on(epoch));
        let switches = DropoutSwitches {
            head: cfg.head_dropout_on(epoch),
            fernet: true,
        };
        let augment = |idx: usize| -> Image {
            let mut rng = sample_rng(cfg.seed, epoch, idx);
            let mut img = base[idx].clone();
            if at {
                img = augment_at(&img, None, &mut rng).0;
            }
            if ct {
                img = augment_ct(&img, &cfg.ct_ranges, &mut rng);
            }
            img
        };
        let order = epoch_order(cfg.seed, epoch, n);
        let (mut total, mut hits) = (0.0, 0);
        for batch in order.chunks(bs) {
            let (l, h) = train_batch(&mut model, &mut adam, batch, cfg.micro_batch, &lr_of, |g, p, m, chunk| {
                let imgs: Vec<Image> = chunk.iter().map(|&i| augment(i)).collect();
                let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut rng = sample_rng(cfg.seed, epoch, chunk[0] + 0xD000_0000);
                let logits = if strategy.end_to_end() {
                    let small: Vec<Image> = imgs.iter().map(|i| prepare_input56(i, input_side)).collect();
                    let x56 = g.input(stack(&small, mean)?);
                    let full: Vec<Var> = imgs.iter().map(|i| g.input(i.to_tensor(mean))).collect();
                    m.forward_end_to_end(g, p, &full, x56, switches, &mut rng)?.logits
                } else {
                    let x = g.input(stack(&imgs, mean)?);
                    m.fernet()?.forward(g, p, x, true, &mut rng)?.1
                };
                let hits = argmax_hits(g, logits, &ys);
                Ok((g.softmax_cross_entropy(logits, &ys)?, hits))
            })?;
            total += l;
            hits += h;
        }
        let acc = hits as f64 / n as f64;
        log.push(total / n as f64, acc, t0.elapsed().as_secs_f64());
        log::info!("{strategy} epoch {epoch}: loss {:.4} train acc {acc:.3}", total / n as f64);
    }
    model.set_all_trainable(true);
    Ok((model, log))
}

/// S5 for 60 epochs with the recipe's augmentation calendar.
pub fn final_recipe(
    samples: &[Sample],
    classes: &[u32],
    localizer: &Model<f32>,
    backbone: BackboneConfig,
    seed: u64,
    grayscale: bool,
) -> Result<(Model<f32>, TrainRunLog)> {
    let cfg = StrategyConfig::final_recipe(seed, grayscale);
    train_strategy(&cfg, samples, classes, Some(localizer), backbone)
}

/// Everything needed to replay a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub seed: u64,
    pub widths: [usize; 3],
    pub lr: f64,
    pub d_lr: f64,
    pub batch: usize,
    pub micro_batch: usize,
    pub ct: bool,
    pub at_from: Option<usize>,
    pub grayscale: bool,
    pub split: String,
    pub split_seed: u64,
    pub firstk: usize,
    pub dataset: String,
    pub localizer: Option<String>,
    pub out: String,
}

impl ExperimentConfig {
    pub fn strategy_config(&self) -> Result<StrategyConfig> {
        let mut cfg = StrategyConfig::new(self.strategy, self.epochs, self.seed)?;
        cfg.lr = self.lr;
        cfg.d_lr = self.d_lr;
        cfg.batch = self.batch;
        cfg.micro_batch = self.micro_batch;
        let all = Window::new(1, self.epochs);
        if self.grayscale {
            cfg.ct = None;
            cfg.at = Some(Window::new(self.at_from.unwrap_or(1), self.epochs));
        } else {
            if !self.ct {
                cfg.ct = None;
            } else if cfg.ct.is_some() {
                cfg.ct = Some(all);
            }
            cfg.at = self.at_from.map(|from| Window::new(from, self.epochs));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("S9".parse::<Strategy>().is_err());
    }

    #[test]
    fn s1_keeps_everything_but_c_frozen() {
        let c = StrategyConfig::new(Strategy::S1, 50, 0).unwrap();
        for e in 1..=50 {
            assert!(c.c_trainable(e));
            assert!(!c.d_trainable(e));
            assert!(!c.head_dropout_on(e));
            assert!(c.ct_on(e) && !c.at_on(e));
        }
    }

    #[test]
    fn s5_dropout_and_d_windows() {
        let c = StrategyConfig::new(Strategy::S5, 40, 0).unwrap();
        for e in 1..=40 {
            assert_eq!(c.head_dropout_on(e), e <= 35, "epoch {e}");
            assert_eq!(c.d_trainable(e), e > 20, "epoch {e}");
        }
        assert!(StrategyConfig::new(Strategy::S5, 35, 0).is_err());
        let s2 = StrategyConfig::new(Strategy::S2, 10, 0).unwrap();
        assert!((1..=10).all(|e| s2.head_dropout_on(e) && !s2.d_trainable(e)));
        let s3 = StrategyConfig::new(Strategy::S3, 30, 0).unwrap();
        assert!(!s3.head_dropout_on(1) && s3.d_trainable(21) && !s3.d_trainable(20));
        assert!(!StrategyConfig::new(Strategy::S0nct, 5, 0).unwrap().ct_on(1));
        assert!(StrategyConfig::new(Strategy::S0, 0, 0).is_err());
    }

    #[test]
    fn final_recipe_calendar() {
        let c = StrategyConfig::final_recipe(3, false);
        assert_eq!((c.strategy, c.epochs), (Strategy::S5, 60));
        for e in 1..=60 {
            assert!(c.ct_on(e));
            assert_eq!(c.at_on(e), e > 40, "epoch {e}");
        }
        let g = StrategyConfig::final_recipe(3, true);
        assert!((1..=60).all(|e| !g.ct_on(e) && g.at_on(e)));
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_windows() {
        let mut c = StrategyConfig::new(Strategy::S3, 30, 0).unwrap();
        c.at = Some(Window::new(0, 10));
        assert!(c.validate().is_err());
        c.at = Some(Window::new(5, 31));
        assert!(c.validate().is_err());
    }

    #[test]
    fn experiment_config_maps_flags() {
        let e = ExperimentConfig {
            strategy: Strategy::S4,
            epochs: 30,
            seed: 1,
            widths: [8, 16, 32],
            lr: 0.001,
            d_lr: 0.0001,
            batch: 64,
            micro_batch: 8,
            ct: true,
            at_from: Some(25),
            grayscale: false,
            split: "internet".into(),
            split_seed: 1,
            firstk: 4,
            dataset: "d/manifest.csv".into(),
            localizer: Some("loc.palmw".into()),
            out: "out".into(),
        };
        let c = e.strategy_config().unwrap();
        assert!(c.ct_on(1) && !c.at_on(24) && c.at_on(25));
        assert_eq!(c.d_lr, 0.0001);
        let back = ExperimentConfig::parse(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn variants_rotate_landmarks_with_the_image() {
        let mut lm = LandmarkSet::template().map(|p| crate::landmarks::Point::new(0.5 * p.x, 0.5 * p.y + 0.1));
        lm.points[0] = crate::landmarks::Point::new(-0.6, -0.4);
        let image = Image::from_fn(56, 56, 3, |_, x, y| if (x, y) == (10, 15) { 1.0 } else { 0.0 });
        let s = Sample {
            path: "a.png".into(),
            palm_id: 0,
            subject_id: 0,
            hand: crate::dataset::Hand::Right,
            image,
            landmarks: Some(lm),
            mask: None,
            n_samples_of_palm: 1,
        };
        let v = localizer_variants(&s, 56, 3, &mut RngState::from_seed(1)).unwrap();
        assert_eq!(v.len(), 8);
        // a quarter turn moves pixel (x, y) to (y, W - 1 - x)
        assert_eq!(v[2].0.get(0, 15, 45), 1.0);
        let p = v[2].1.points[0];
        assert!((p.x + 0.4).abs() < 1e-12 && (p.y - 0.6).abs() < 1e-12);
    }

    #[test]
    fn mean_rgb_of_constant_images() {
        let a = Image::from_fn(4, 4, 3, |c, _, _| c as f32 * 0.25);
        let b = Image::from_fn(4, 4, 1, |_, _, _| 0.5);
        assert_eq!(mean_rgb([&a, &b]), [0.25, 0.375, 0.5]);
    }
}
