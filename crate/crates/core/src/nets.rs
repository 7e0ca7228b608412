//! ROI-LANet, FERnet and their end-to-end composition.
//!
//! All parameters of a model live in one [`ParamStore`]. Names carry the
//! owning subnetwork and block: `la.backbone.*` (block B), `la.head.*`
//! (block A, also addressed as D once the localizer is embedded) and
//! `fer.*` (block C).

use std::path::Path;
use std::str::FromStr;

use ndgrad::param::Bound;
use ndgrad::{DropoutMode, Graph, ParamId, ParamStore, Real, RngState, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};
use crate::tps::RoiSampler;

pub const FC1: usize = 512;
pub const FC2: usize = 128;
pub const DESCRIPTOR_DIM: usize = 512;
pub const LEAK: f64 = 0.1;
pub const DROP1: f64 = 0.2;
pub const DROP2: f64 = 0.1;
pub const DROP3: f64 = 0.5;
pub const DROP4: f64 = 0.5;
pub const NORM_EPS: f64 = 1e-8;
/// Variance of the Gaussian used for fully connected layers.
pub const FC_INIT_VAR: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub widths: [usize; 3],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64],
        }
    }
}

impl BackboneConfig {
    pub const FULL: Self = Self {
        widths: [64, 128, 256],
    };

    pub fn out_channels(&self) -> usize {
        self.widths[2]
    }

    /// Side of the feature map for a square input (three 2x pools).
    pub fn feature_side(&self, input_side: usize) -> Result<usize> {
        if input_side == 0 || input_side % 8 != 0 {
            return Err(invalid(format!(
                "input side {input_side} is not divisible by 8"
            )));
        }
        Ok(input_side / 8)
    }
}

/// Self-describing architecture record stored in weights files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub backbone: BackboneConfig,
    /// FERnet widths when they differ from the localizer's.
    #[serde(default)]
    pub fer_backbone: Option<BackboneConfig>,
    pub input_side: usize,
    pub roi_side: usize,
    pub has_localizer: bool,
    /// FERnet reads whole hand images resized to `roi_side` instead of ROIs.
    #[serde(default)]
    pub hand_input: bool,
    /// `None` for a localizer-only model.
    pub n_class: Option<usize>,
    pub mean_rgb: [f32; 3],
    /// Class ids in logit order.
    #[serde(default)]
    pub classes: Vec<u32>,
    /// Free-form run metadata (seeds, strategy).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Arch {
    pub fn fer_widths(&self) -> BackboneConfig {
        self.fer_backbone.unwrap_or(self.backbone)
    }

    /// Number of scalar parameters the architecture declares, `None` on
    /// overflow.
    pub fn parameter_count(&self) -> Option<usize> {
        let backbone = |cfg: &BackboneConfig| {
            let mut cin = 3usize;
            let mut total = 0usize;
            for &w in &cfg.widths {
                for _ in 0..2 {
                    total = total.checked_add(w.checked_mul(cin)?.checked_mul(9)?.checked_add(w)?)?;
                    cin = w;
                }
            }
            Some(total)
        };
        let fc = |din: usize, dout: usize| din.checked_mul(dout)?.checked_add(dout);
        let mut total = 0usize;
        if self.has_localizer {
            let side = self.input_side / 8;
            let flat = self.backbone.out_channels().checked_mul(side)?.checked_mul(side)?;
            total = backbone(&self.backbone)?
                .checked_add(fc(flat, FC1)?)?
                .checked_add(fc(FC1, FC2)?)?
                .checked_add(fc(FC2, 2 * NUM_LANDMARKS)?)?;
        }
        if let Some(n) = self.n_class {
            let f = self.fer_widths();
            let rs = self.roi_side / 8;
            let flat = f.out_channels().checked_mul(rs)?.checked_mul(rs)?;
            total = total
                .checked_add(backbone(&f)?)?
                .checked_add(fc(flat, DESCRIPTOR_DIM)?)?
                .checked_add(fc(DESCRIPTOR_DIM, n)?)?;
        }
        Some(total)
    }

    pub fn new(backbone: BackboneConfig) -> Self {
        Self {
            backbone,
            fer_backbone: None,
            input_side: 56,
            roi_side: 112,
            has_localizer: true,
            hand_input: false,
            n_class: None,
            mean_rgb: [0.0; 3],
            classes: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    A,
    B,
    C,
    D,
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Block::A),
            "B" | "b" => Ok(Block::B),
            "C" | "c" => Ok(Block::C),
            "D" | "d" => Ok(Block::D),
            other => Err(invalid(format!("unknown block {other:?}"))),
        }
    }
}

impl Block {
    fn prefix(self) -> &'static str {
        match self {
            Block::A | Block::D => "la.head.",
            Block::B => "la.backbone.",
            Block::C => "fer.",
        }
    }

    /// The physical block of a parameter; D is never returned because it
    /// shares its parameters with A.
    pub fn of(name: &str) -> Option<Block> {
        [Block::A, Block::B, Block::C]
            .into_iter()
            .find(|b| name.starts_with(b.prefix()))
    }

    pub fn contains(self, name: &str) -> bool {
        name.starts_with(self.prefix())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    convs: [Layer; 6],
}

#[derive(Clone, Debug)]
pub struct RoiLaNet {
    backbone: Backbone,
    fc: [Layer; 3],
}

#[derive(Clone, Debug)]
pub struct FerNet {
    backbone: Backbone,
    fc4: Layer,
    fc5: Layer,
}

/// Per-call switches for the stochastic layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutSwitches {
    /// Drop1/Drop2 in the regression head.
    pub head: bool,
    /// Drop3/Drop4 in FERnet.
    pub fernet: bool,
}

impl DropoutSwitches {
    pub const OFF: Self = Self {
        head: false,
        fernet: false,
    };
}

fn mode(on: bool) -> DropoutMode {
    if on {
        DropoutMode::Train
    } else {
        DropoutMode::Eval
    }
}

/// Network parameters plus the handles needed to run them.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub arch: Arch,
    pub store: ParamStore<T>,
    pub localizer: Option<RoiLaNet>,
    pub fernet: Option<FerNet>,
}

fn gaussian<T: Real>(shape: &[usize], std: f64, rng: &mut RngState) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(std * rng.normal()))
}

fn add_conv<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
    rng: &mut RngState,
) -> Result<Layer> {
    let std = (2.0 / (cin * 9) as f64).sqrt();
    Ok(Layer {
        w: store.add(&format!("{name}.w"), gaussian(&[cout, cin, 3, 3], std, rng))?,
        b: store.add(&format!("{name}.b"), Tensor::zeros(&[cout]))?,
    })
}

fn add_fc<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    din: usize,
    dout: usize,
    rng: &mut RngState,
) -> Result<Layer> {
    let std = FC_INIT_VAR.sqrt();
    Ok(Layer {
        w: store.add(&format!("{name}.w"), gaussian(&[din, dout], std, rng))?,
        b: store.add(&format!("{name}.b"), gaussian(&[dout], std, rng))?,
    })
}

fn add_backbone<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &BackboneConfig,
    rng: &mut RngState,
) -> Result<Backbone> {
    let mut convs = Vec::with_capacity(6);
    let mut cin = 3;
    for (bi, &w) in cfg.widths.iter().enumerate() {
        for li in 0..2 {
            convs.push(add_conv(
                store,
                &format!("{prefix}.conv{}_{}", bi + 1, li + 1),
                cin,
                w,
                rng,
            )?);
            cin = w;
        }
    }
    Ok(Backbone {
        convs: convs.try_into().expect("six layers"),
    })
}

impl Backbone {
    /// Three blocks of (conv, relu, conv, relu, pool), then per-location
    /// L2 normalization across channels.
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.convs.iter().enumerate() {
            h = g.conv2d(h, p.var(l.w), p.var(l.b), 1, 1)?;
            h = g.relu(h);
            if i % 2 == 1 {
                h = g.maxpool2(h)?;
            }
        }
        Ok(g.channel_l2_normalize(h, T::lit(NORM_EPS))?)
    }
}

fn fc<T: Real>(g: &mut Graph<T>, p: &Bound, l: Layer, x: Var) -> Result<Var> {
    Ok(g.fully_connected(x, p.var(l.w), p.var(l.b))?)
}

impl RoiLaNet {
    /// `B x 3 x 56 x 56` to `B x 18` landmark coordinates in `(-1, 1)`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        head_dropout: bool,
        rng: &mut RngState,
    ) -> Result<Var> {
        let f = self.backbone.forward(g, p, x)?;
        let f = g.flatten(f)?;
        self.head(g, p, f, head_dropout, rng)
    }

    /// Backbone features only, flattened (`B x flat`).
    pub fn features<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let f = self.backbone.forward(g, p, x)?;
        Ok(g.flatten(f)?)
    }

    /// Regression head on flattened features.
    pub fn head<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f: Var,
        dropout: bool,
        rng: &mut RngState,
    ) -> Result<Var> {
        let m = mode(dropout);
        let h = fc(g, p, self.fc[0], f)?;
        let h = g.leaky_relu(h, T::lit(LEAK));
        let h = g.dropout(h, DROP1, m, rng)?;
        let h = fc(g, p, self.fc[1], h)?;
        let h = g.leaky_relu(h, T::lit(LEAK));
        let h = g.dropout(h, DROP2, m, rng)?;
        let h = fc(g, p, self.fc[2], h)?;
        Ok(g.tanh(h))
    }
}

impl FerNet {
    /// `B x 3 x 112 x 112` ROIs to `(descriptor B x 512, logits B x N)`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        roi: Var,
        dropout: bool,
        rng: &mut RngState,
    ) -> Result<(Var, Var)> {
        let m = mode(dropout);
        let f = self.backbone.forward(g, p, roi)?;
        let f = g.flatten(f)?;
        let f = g.dropout(f, DROP3, m, rng)?;
        let desc = fc(g, p, self.fc4, f)?;
        let h = g.dropout(desc, DROP4, m, rng)?;
        let logits = fc(g, p, self.fc5, h)?;
        Ok((desc, logits))
    }
}

/// Everything produced by one end-to-end pass.
pub struct EndToEnd {
    pub landmarks: Var,
    pub roi: Var,
    pub descriptor: Var,
    pub logits: Var,
}

impl<T: Real> Model<T> {
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        let side = arch.backbone.feature_side(arch.input_side)?;
        arch.fer_widths().feature_side(arch.roi_side)?;
        if arch.backbone.widths.contains(&0) || arch.fer_widths().widths.contains(&0) {
            return Err(invalid("backbone widths must be positive"));
        }
        let mut rng = RngState::new(seed, 0x1417);
        let mut store = ParamStore::new();
        let c = arch.backbone.out_channels();
        let fc = arch.fer_widths();
        let localizer = if arch.has_localizer {
            let backbone = add_backbone(&mut store, "la.backbone", &arch.backbone, &mut rng)?;
            let flat = c * side * side;
            let fc = [
                add_fc(&mut store, "la.head.fc1", flat, FC1, &mut rng)?,
                add_fc(&mut store, "la.head.fc2", FC1, FC2, &mut rng)?,
                add_fc(&mut store, "la.head.fc3", FC2, 2 * NUM_LANDMARKS, &mut rng)?,
            ];
            Some(RoiLaNet { backbone, fc })
        } else {
            None
        };
        let fernet = match arch.n_class {
            Some(0) => return Err(invalid("n_class must be positive")),
            Some(n) => {
                let backbone = add_backbone(&mut store, "fer.backbone", &fc, &mut rng)?;
                let rs = arch.roi_side / 8;
                Some(FerNet {
                    backbone,
                    fc4: add_fc(&mut store, "fer.fc4", fc.out_channels() * rs * rs, DESCRIPTOR_DIM, &mut rng)?,
                    fc5: add_fc(&mut store, "fer.fc5", DESCRIPTOR_DIM, n, &mut rng)?,
                })
            }
            None => None,
        };
        Ok(Self {
            arch,
            store,
            localizer,
            fernet,
        })
    }

    pub fn localizer(&self) -> Result<&RoiLaNet> {
        self.localizer
            .as_ref()
            .ok_or_else(|| Error::Precondition("model has no localizer".into()))
    }

    pub fn fernet(&self) -> Result<&FerNet> {
        self.fernet
            .as_ref()
            .ok_or_else(|| Error::Precondition("model has no FERnet".into()))
    }

    /// Toggles `trainable` on every parameter of `block`; returns how many
    /// parameters were touched.
    pub fn set_block_trainable(&mut self, block: Block, flag: bool) -> usize {
        self.store.set_trainable_where(|n| block.contains(n), flag)
    }

    pub fn set_all_trainable(&mut self, flag: bool) {
        self.store.iter_mut().for_each(|p| p.trainable = flag);
    }

    /// Copies localizer parameters (`la.*`) from `other`.
    pub fn copy_localizer_from(&mut self, other: &Model<T>) -> Result<()> {
        for (_, p) in other.store.iter() {
            if !p.name.starts_with("la.") {
                continue;
            }
            let id = self
                .store
                .id(&p.name)
                .ok_or_else(|| invalid(format!("no parameter {} to copy into", p.name)))?;
            let dst = &mut self.store.get_mut(id).tensor;
            if dst.shape() != p.tensor.shape() {
                return Err(invalid(format!("shape mismatch for {}", p.name)));
            }
            *dst = p.tensor.clone();
        }
        Ok(())
    }

    /// Localize a batch `B x 3 x 56 x 56`, end to end through the sampler
    /// and FERnet.
    pub fn forward_end_to_end(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        full_images: &[Var],
        image56: Var,
        switches: DropoutSwitches,
        rng: &mut RngState,
    ) -> Result<EndToEnd> {
        let landmarks = self
            .localizer()?
            .forward(g, p, image56, switches.head, rng)?;
        let side = self.arch.roi_side;
        let sampler = RoiSampler::<T>::shared(side, side)?;
        let roi = sampler.extract(g, full_images, landmarks)?;
        let (descriptor, logits) = self.fernet()?.forward(g, p, roi, switches.fernet, rng)?;
        Ok(EndToEnd {
            landmarks,
            roi,
            descriptor,
            logits,
        })
    }

    /// Predicted landmarks for one already resized image (eval mode unless
    /// `head_dropout`).
    pub fn localize(
        &self,
        image56: &Image,
        head_dropout: bool,
        rng: &mut RngState,
    ) -> Result<LandmarkSet> {
        let s = self.arch.input_side;
        if image56.width() != s || image56.height() != s {
            return Err(invalid(format!(
                "localizer input must be {s}x{s}, got {}x{}",
                image56.width(),
                image56.height()
            )));
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.input(image56.to_tensor(self.arch.mean_rgb));
        let out = self.localizer()?.forward(&mut g, &p, x, head_dropout, rng)?;
        let v: Vec<f64> = g.value(out).data().iter().map(|v| v.as_f64()).collect();
        LandmarkSet::from_flat(&v)
    }

    /// Descriptor and logits for one ROI, eval mode.
    pub fn forward_fernet(&self, roi: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.arch.roi_side;
        if roi.width() != s || roi.height() != s {
            return Err(invalid(format!(
                "FERnet input must be {s}x{s}, got {}x{}",
                roi.width(),
                roi.height()
            )));
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.input(roi.to_tensor(self.arch.mean_rgb));
        let mut rng = RngState::from_seed(0);
        let (d, l) = self.fernet()?.forward(&mut g, &p, x, false, &mut rng)?;
        let f = |v: Var| g.value(v).data().iter().map(|x| x.as_f64()).collect();
        Ok((f(d), f(l)))
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut store = ParamStore::new();
        for (_, p) in self.store.iter() {
            let id = store.add(&p.name, p.tensor.cast()).expect("names already unique");
            store.get_mut(id).trainable = p.trainable;
        }
        Model {
            arch: self.arch.clone(),
            store,
            localizer: self.localizer.clone(),
            fernet: self.fernet.clone(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let arch = serde_json::to_value(&self.arch)?;
        Ok(ndgrad::weights::encode(
            &arch,
            self.store.iter().map(|(_, p)| (p.name.as_str(), &p.tensor)),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }
}

impl Model<f32> {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let file = ndgrad::weights::decode(bytes)?;
        let arch: Arch = serde_json::from_value(file.arch.clone())
            .map_err(|e| invalid(format!("weights file arch: {e}")))?;
        let stored: usize = file.tensors.iter().map(|(_, t)| t.len()).sum();
        if arch.parameter_count() != Some(stored) {
            return Err(invalid(format!(
                "weights file holds {stored} values but its architecture declares {:?}",
                arch.parameter_count()
            )));
        }
        let mut model = Model::<f32>::new(arch, 0)?;
        if file.tensors.len() != model.store.len() {
            return Err(invalid(format!(
                "weights file has {} tensors, architecture needs {}",
                file.tensors.len(),
                model.store.len()
            )));
        }
        for (name, t) in file.tensors {
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| invalid(format!("unexpected tensor {name}")))?;
            let dst = &mut model.store.get_mut(id).tensor;
            if dst.shape() != t.shape() {
                return Err(invalid(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t;
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::decode(&bytes)
    }
}

/// Number of weights and biases in the regression head for a given
/// flattened feature size.
pub fn head_param_count(flat: usize) -> usize {
    (flat * FC1 + FC1) + (FC1 * FC2 + FC2) + (FC2 * 18 + 18)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch(n_class: Option<usize>) -> Arch {
        Arch {
            n_class,
            ..Arch::new(BackboneConfig { widths: [2, 3, 4] })
        }
    }

    fn test_image(side: usize) -> Image {
        Image::from_fn(side, side, 3, |c, x, y| {
            (0.5 + 0.4 * ((x as f32 * 0.3 + c as f32).sin() * (y as f32 * 0.2).cos())).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn feature_sides_and_head_count() {
        for w in [[2, 3, 4], [16, 32, 64]] {
            let cfg = BackboneConfig { widths: w };
            assert_eq!(cfg.feature_side(56).unwrap(), 7);
            assert_eq!(cfg.feature_side(112).unwrap(), 14);
            let m = Model::<f32>::new(Arch::new(cfg), 1).unwrap();
            let head: usize = m
                .store
                .iter()
                .filter(|(_, p)| Block::A.contains(&p.name))
                .map(|(_, p)| p.tensor.len())
                .sum();
            assert_eq!(head, head_param_count(w[2] * 49));
        }
        assert!(BackboneConfig::default().feature_side(50).is_err());
    }

    #[test]
    fn declared_parameter_count_matches_the_store() {
        let mut hand = tiny_arch(Some(7));
        hand.has_localizer = false;
        hand.fer_backbone = Some(BackboneConfig { widths: [3, 5, 6] });
        for arch in [tiny_arch(None), tiny_arch(Some(5)), hand] {
            let m = Model::<f32>::new(arch.clone(), 1).unwrap();
            let total: usize = m.store.iter().map(|(_, p)| p.tensor.len()).sum();
            assert_eq!(arch.parameter_count(), Some(total));
        }
        let mut huge = tiny_arch(Some(3));
        huge.backbone.widths = [usize::MAX / 2, 1, 1];
        assert_eq!(huge.parameter_count(), None);
    }

    #[test]
    fn blocks_partition_parameters() {
        let m = Model::<f32>::new(tiny_arch(Some(5)), 3).unwrap();
        for (_, p) in m.store.iter() {
            let hits = [Block::A, Block::B, Block::C]
                .iter()
                .filter(|b| b.contains(&p.name))
                .count();
            assert_eq!(hits, 1, "{}", p.name);
            assert!(Block::of(&p.name).is_some());
        }
        assert!("E".parse::<Block>().is_err());
    }

    #[test]
    fn zero_fc3_weights_localize_near_center() {
        let mut m = Model::<f32>::new(tiny_arch(None), 4).unwrap();
        let id = m.store.id("la.head.fc3.w").unwrap();
        m.store.get_mut(id).tensor.data_mut().fill(0.0);
        let mut rng = RngState::from_seed(1);
        let lm = m.localize(&test_image(56), false, &mut rng).unwrap();
        assert!(lm.points.iter().all(|p| p.x.abs() < 0.2 && p.y.abs() < 0.2));
        let again = m.localize(&test_image(56), false, &mut rng).unwrap();
        assert_eq!(lm, again);
        assert!(m.localize(&test_image(48), false, &mut rng).is_err());
    }

    #[test]
    fn head_dropout_varies_output() {
        let m = Model::<f32>::new(tiny_arch(None), 5).unwrap();
        let mut rng = RngState::from_seed(2);
        let img = test_image(56);
        let runs: Vec<_> = (0..10)
            .map(|_| m.localize(&img, true, &mut rng).unwrap().to_flat())
            .collect();
        for k in 0..18 {
            let first = runs[0][k];
            assert!(runs.iter().any(|r| r[k] != first), "coordinate {k} constant");
        }
    }

    #[test]
    fn fernet_shapes_and_zero_input() {
        let m = Model::<f32>::new(tiny_arch(Some(20)), 6).unwrap();
        let zero = Image::zeros(112, 112, 3);
        let (d, l) = m.forward_fernet(&zero).unwrap();
        assert_eq!(d.len(), DESCRIPTOR_DIM);
        assert_eq!(l.len(), 20);
        assert!(d.iter().chain(&l).all(|v| v.is_finite()));
        let (d2, _) = m.forward_fernet(&zero).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut arch = tiny_arch(Some(3));
        arch.mean_rgb = [0.25, 0.5, 0.125];
        arch.classes = vec![4, 9, 11];
        let m = Model::<f32>::new(arch, 7).unwrap();
        let path = dir.path().join("m.palmw");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.arch, m.arch);
        for ((_, a), (_, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor, b.tensor);
        }
        assert_eq!(back.encode().unwrap(), m.encode().unwrap());
    }
}
