//! Dataset manifests, synthetic dataset generation and loading.
//!
//! Layout: `<root>/manifest.csv`, `<root>/landmarks.csv`, `<root>/images/*`
//! and `<root>/masks/*` (mask file names mirror image names).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndgrad::rng::derive_seed;
use ndgrad::RngState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::landmarks::{
    flip_left_to_right, read_landmark_csv, write_landmark_csv, CoordSpace, LandmarkRow,
    LandmarkSet,
};
use crate::synth::{render_random, NuisanceRanges, PalmIdentity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hand {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Hand {
    fn as_str(self) -> &'static str {
        match self {
            Hand::Left => "L",
            Hand::Right => "R",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub palm_id: u32,
    pub subject_id: u32,
    pub hand: Hand,
    pub width: usize,
    pub height: usize,
    pub n_samples_of_palm: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

const MANIFEST_HEADER: [&str; 7] = [
    "path",
    "palm_id",
    "subject_id",
    "hand",
    "width",
    "height",
    "n_samples_of_palm",
];

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses manifest text; errors carry 1-based line numbers.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<&str> = rd.headers()?.iter().collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                msg: format!("expected header {}", MANIFEST_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.deserialize::<ManifestRow>().enumerate() {
            let line = i + 2;
            let row = rec.map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: e.to_string(),
            })?;
            if row.path.is_empty() || row.width == 0 || row.height == 0 {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line,
                    msg: "empty path or zero dimension".into(),
                });
            }
            rows.push(row);
        }
        let m = Self { rows };
        m.check_consistency(origin)?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Every palm keeps one subject and hand, and its sample count matches
    /// the number of rows.
    fn check_consistency(&self, origin: &Path) -> Result<()> {
        let mut seen: BTreeMap<u32, (u32, Hand, usize, usize)> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            let e = seen
                .entry(r.palm_id)
                .or_insert((r.subject_id, r.hand, r.n_samples_of_palm, 0));
            if (e.0, e.1, e.2) != (r.subject_id, r.hand, r.n_samples_of_palm) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 2,
                    msg: format!("palm {} has inconsistent metadata", r.palm_id),
                });
            }
            e.3 += 1;
        }
        for (palm, (_, _, n, count)) in seen {
            if n != count {
                return Err(Error::Data {
                    path: origin.to_path_buf(),
                    msg: format!("palm {palm} declares {n} samples but has {count} rows"),
                });
            }
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rows {
            h.update(
                format!(
                    "{},{},{},{},{},{},{}\n",
                    r.path,
                    r.palm_id,
                    r.subject_id,
                    r.hand.as_str(),
                    r.width,
                    r.height,
                    r.n_samples_of_palm
                )
                .as_bytes(),
            );
        }
        hex::encode(h.finalize())
    }
}

/// How many images each palm receives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCounts {
    Fixed(usize),
    /// `1 + Binomial(7, p)` with `p` chosen to hit the mean: values in 1..=8.
    Binomial { mean: f64 },
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts::Binomial { mean: 2.9 }
    }
}

impl SampleCounts {
    pub fn draw(&self, rng: &mut RngState) -> Result<usize> {
        match *self {
            SampleCounts::Fixed(0) => Err(invalid("samples per palm must be positive")),
            SampleCounts::Fixed(n) => Ok(n),
            SampleCounts::Binomial { mean } => {
                if !(1.0..=8.0).contains(&mean) {
                    return Err(invalid(format!("mean samples {mean} outside [1, 8]")));
                }
                let p = (mean - 1.0) / 7.0;
                Ok(1 + (0..7).filter(|_| rng.uniform() < p).count())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub n_palms: usize,
    pub samples: SampleCounts,
    pub ranges: NuisanceRanges,
    pub seed: u64,
    /// Write single-channel PGM images instead of colour PNG.
    pub grayscale: bool,
}

impl GenerateConfig {
    pub fn new(n_palms: usize, seed: u64) -> Self {
        Self {
            n_palms,
            samples: SampleCounts::default(),
            ranges: NuisanceRanges::default(),
            seed,
            grayscale: false,
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        msg: format!("cannot create directory: {e}"),
    })
}

/// Palm `p` belongs to subject `p / 2`; even palms are right hands.
pub fn palm_hand(palm: u32) -> Hand {
    if palm % 2 == 0 {
        Hand::Right
    } else {
        Hand::Left
    }
}

/// Renders a synthetic dataset into `out`. Each image depends only on
/// `(seed, palm, index)`, so generation order does not matter.
pub fn generate_dataset(cfg: &GenerateConfig, out: &Path) -> Result<DatasetManifest> {
    if cfg.n_palms == 0 {
        return Err(invalid("n_palms must be positive"));
    }
    create_dir(&out.join("images"))?;
    create_dir(&out.join("masks"))?;
    let ext = if cfg.grayscale { "pgm" } else { "png" };
    let mut rows = Vec::new();
    let mut lm_rows = Vec::new();
    for palm in 0..cfg.n_palms as u32 {
        let mut count_rng = RngState::new(derive_seed(&[cfg.seed, palm as u64, 0xC0]), 0);
        let n = cfg.samples.draw(&mut count_rng)?;
        let identity = PalmIdentity::new(palm as u64, cfg.seed);
        let hand = palm_hand(palm);
        for k in 0..n {
            let mut rng = RngState::new(derive_seed(&[cfg.seed, palm as u64, k as u64]), 1);
            let s = render_random(&identity, &cfg.ranges, &mut rng)?;
            let (image, mask, landmarks) = match hand {
                Hand::Right => (s.image, s.mask, s.landmarks),
                Hand::Left => (
                    s.image.flip_horizontal(),
                    s.mask.flip_horizontal(),
                    s.landmarks.mirrored(),
                ),
            };
            let name = format!("p{palm:05}_{k:02}.{ext}");
            let rel = format!("images/{name}");
            let image = if cfg.grayscale { image.to_gray() } else { image };
            image.save(&out.join(&rel))?;
            mask.save(&out.join("masks").join(format!("p{palm:05}_{k:02}.png")))?;
            rows.push(ManifestRow {
                path: rel.clone(),
                palm_id: palm,
                subject_id: palm / 2,
                hand,
                width: image.width(),
                height: image.height(),
                n_samples_of_palm: n,
            });
            lm_rows.push(LandmarkRow {
                path: rel,
                landmarks,
                space: CoordSpace::Normalized,
            });
        }
    }
    let manifest = DatasetManifest { rows };
    manifest.write(&out.join("manifest.csv"))?;
    write_landmark_csv(&out.join("landmarks.csv"), &lm_rows)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub path: String,
    pub palm_id: u32,
    pub subject_id: u32,
    pub hand: Hand,
    pub image: Image,
    pub landmarks: Option<LandmarkSet>,
    pub mask: Option<Image>,
    pub n_samples_of_palm: usize,
}

impl Sample {
    /// Mirrors left hands into right ones (image, mask and landmarks).
    pub fn to_right_hand(&self) -> Sample {
        if self.hand == Hand::Right {
            return self.clone();
        }
        let (image, landmarks) = match &self.landmarks {
            Some(l) => {
                let (i, l) = flip_left_to_right(&self.image, l);
                (i, Some(l))
            }
            None => (self.image.flip_horizontal(), None),
        };
        Sample {
            image,
            landmarks,
            mask: self.mask.as_ref().map(Image::flip_horizontal),
            hand: Hand::Right,
            ..self.clone()
        }
    }

    /// The image with background pixels set to zero (needs a mask).
    pub fn segmented(&self) -> Option<Image> {
        let mask = self.mask.as_ref()?;
        let mut img = self.image.clone();
        let n = img.width() * img.height();
        for c in 0..img.channels() {
            for i in 0..n {
                img.data_mut()[c * n + i] *= mask.data()[i];
            }
        }
        Some(img)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn has_landmarks(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.landmarks.is_some())
    }

    /// Mirrors every left hand; palm ids already keep the two hands of a
    /// subject apart.
    pub fn right_handed(&self) -> Dataset {
        Dataset {
            root: self.root.clone(),
            samples: self.samples.iter().map(Sample::to_right_hand).collect(),
        }
    }

    pub fn palm_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.palm_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Loads a manifest with its images, and the landmark CSV and masks when
/// present next to it. Grayscale images come back as three equal channels.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let lm_path = root.join("landmarks.csv");
    let landmarks: BTreeMap<String, LandmarkSet> = if lm_path.exists() {
        let mut map = BTreeMap::new();
        for (i, row) in read_landmark_csv(&lm_path)?.into_iter().enumerate() {
            if row.space != CoordSpace::Normalized {
                return Err(Error::Parse {
                    path: lm_path.clone(),
                    line: i + 2,
                    msg: "landmarks must be in normalized space".into(),
                });
            }
            if !row.landmarks.within_frame() {
                return Err(Error::Parse {
                    path: lm_path.clone(),
                    line: i + 2,
                    msg: "landmark outside [-1, 1]".into(),
                });
            }
            map.insert(row.path, row.landmarks);
        }
        map
    } else {
        BTreeMap::new()
    };
    let mut samples = Vec::with_capacity(manifest.rows.len());
    for (i, row) in manifest.rows.iter().enumerate() {
        let path = root.join(&row.path);
        let image = Image::load(&path)?.into_rgb();
        if image.width() != row.width || image.height() != row.height {
            return Err(Error::Parse {
                path: manifest_path.to_path_buf(),
                line: i + 2,
                msg: format!(
                    "{} is {}x{}, manifest says {}x{}",
                    row.path,
                    image.width(),
                    image.height(),
                    row.width,
                    row.height
                ),
            });
        }
        let mask_path = mask_path_for(&root, &row.path);
        let mask = if mask_path.exists() {
            Some(Image::load(&mask_path)?.to_gray())
        } else {
            None
        };
        samples.push(Sample {
            path: row.path.clone(),
            palm_id: row.palm_id,
            subject_id: row.subject_id,
            hand: row.hand,
            image,
            landmarks: landmarks.get(&row.path).copied(),
            mask,
            n_samples_of_palm: row.n_samples_of_palm,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data {
            path: manifest_path.to_path_buf(),
            msg: "manifest lists no images".into(),
        });
    }
    Ok(Dataset { root, samples })
}

fn mask_path_for(root: &Path, image_rel: &str) -> PathBuf {
    let name = Path::new(image_rel)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    root.join("masks").join(format!("{name}.png"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n: usize, seed: u64) -> GenerateConfig {
        GenerateConfig {
            samples: SampleCounts::Fixed(2),
            ranges: NuisanceRanges {
                side: (40, 64),
                ..NuisanceRanges::default()
            },
            ..GenerateConfig::new(n, seed)
        }
    }

    #[test]
    fn generate_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small_cfg(3, 5), dir.path()).unwrap();
        assert_eq!(m.rows.len(), 6);
        let ds = load_dataset(&dir.path().join("manifest.csv")).unwrap();
        assert!(ds.has_landmarks());
        let written = read_landmark_csv(&dir.path().join("landmarks.csv")).unwrap();
        for (s, r) in ds.samples.iter().zip(&written) {
            let a = s.landmarks.unwrap().to_flat();
            let b = r.landmarks.to_flat();
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
            assert!(s.landmarks.unwrap().within_frame());
            assert!(s.mask.is_some());
        }
        let again = tempfile::tempdir().unwrap();
        let m2 = generate_dataset(&small_cfg(3, 5), again.path()).unwrap();
        assert_eq!(m.sha256(), m2.sha256());
        let a = std::fs::read(dir.path().join("images/p00001_01.png")).unwrap();
        let b = std::fs::read(again.path().join("images/p00001_01.png")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn left_hands_flip_back_to_rendered_right_hand() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small_cfg(2, 1), dir.path()).unwrap();
        let ds = load_dataset(&dir.path().join("manifest.csv")).unwrap();
        let left = ds.samples.iter().find(|s| s.hand == Hand::Left).unwrap();
        let right = left.to_right_hand();
        assert_eq!(right.to_right_hand().image, right.image);
        // After flipping, L1 sits left of L3 as in the template.
        let lm = right.landmarks.unwrap();
        assert!(lm.points[0].x < lm.points[2].x);
        assert!(left.landmarks.unwrap().points[0].x < left.landmarks.unwrap().points[2].x);
    }

    #[test]
    fn sample_counts_distribution() {
        let mut rng = RngState::from_seed(3);
        let d = SampleCounts::default();
        let draws: Vec<usize> = (0..20000).map(|_| d.draw(&mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
        assert!((mean - 2.9).abs() < 0.05, "mean {mean}");
        assert!(draws.iter().all(|&n| (1..=8).contains(&n)));
        assert!(SampleCounts::Fixed(0).draw(&mut rng).is_err());
        assert!(generate_dataset(&GenerateConfig::new(0, 1), Path::new("/tmp")).is_err());
    }

    #[test]
    fn load_errors_name_path_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(
            &manifest,
            "path,palm_id,subject_id,hand,width,height,n_samples_of_palm\nimages/missing.png,0,0,R,40,40,1\n",
        )
        .unwrap();
        match load_dataset(&manifest) {
            Err(e) => assert!(e.to_string().contains("missing.png"), "{e}"),
            Ok(_) => panic!("missing image accepted"),
        }
        std::fs::write(
            &manifest,
            "path,palm_id,subject_id,hand,width,height,n_samples_of_palm\nimages/a.png,0,0,R,40,40,1\nimages/b.png,x,0,R,40,40,1\n",
        )
        .unwrap();
        match load_dataset(&manifest) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn grayscale_pgm_loads_as_equal_channels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerateConfig {
            grayscale: true,
            ..small_cfg(1, 2)
        };
        generate_dataset(&cfg, dir.path()).unwrap();
        let ds = load_dataset(&dir.path().join("manifest.csv")).unwrap();
        let img = &ds.samples[0].image;
        assert_eq!(img.channels(), 3);
        assert_eq!(img.plane(0), img.plane(1));
        assert_eq!(img.plane(1), img.plane(2));
    }
}
