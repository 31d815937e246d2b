use std::fs;
use std::path::Path;

use lapform_core::{RngState, TokenBatch};
use lapform_model::{ImageBatch, InputBatch, InputSpec};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, MeasureSplit};
use crate::error::{HarnessError, HarnessResult};

/// Gaussian cluster generator: class centers on a sphere, per-sequence means
/// around the center, tokens around the sequence mean. Each token position
/// additionally carries a fixed offset shared by every sequence, so sequences
/// have within-sequence structure beyond isotropic noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
    #[serde(default = "default_class_noise")]
    pub class_noise: f64,
    #[serde(default = "default_seq_noise")]
    pub seq_noise: f64,
    #[serde(default = "default_position_scale")]
    pub position_scale: f64,
    #[serde(default = "default_data_seed")]
    pub seed: u64,
}

fn default_classes() -> usize {
    4
}

fn default_per_class() -> usize {
    128
}

fn default_test_per_class() -> usize {
    32
}

fn default_seq_len() -> usize {
    8
}

fn default_dim() -> usize {
    32
}

fn default_center_scale() -> f64 {
    2.0
}

fn default_class_noise() -> f64 {
    0.3
}

fn default_seq_noise() -> f64 {
    2.2
}

fn default_position_scale() -> f64 {
    2.0
}

fn default_data_seed() -> u64 {
    1234
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: default_classes(),
            per_class: default_per_class(),
            test_per_class: default_test_per_class(),
            seq_len: default_seq_len(),
            dim: default_dim(),
            center_scale: default_center_scale(),
            class_noise: default_class_noise(),
            seq_noise: default_seq_noise(),
            position_scale: default_position_scale(),
            seed: default_data_seed(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> HarnessResult<()> {
        if self.classes == 0
            || self.per_class == 0
            || self.test_per_class == 0
            || self.seq_len == 0
            || self.dim == 0
        {
            return Err(HarnessError::Config(
                "synthetic counts must all be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("center_scale", self.center_scale),
            ("class_noise", self.class_noise),
            ("seq_noise", self.seq_noise),
            ("position_scale", self.position_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HarnessError::Config(format!(
                    "synthetic {name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Token sequences with one label per sequence.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub tokens: TokenBatch,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// One split in model-input form, whatever the underlying source.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub input: InputBatch,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn into_split(self) -> SplitData {
        SplitData {
            input: InputBatch::Tokens(self.tokens),
            labels: self.labels,
            num_classes: self.num_classes,
        }
    }
}

fn check_tokens_match(model: &lapform_model::ModelConfig, set: &LabeledDataset) -> HarnessResult<()> {
    if set.tokens.dim() != model.input_token_dim()
        || set.tokens.seq_len() != model.seq_len()
        || set.num_classes != model.num_classes
    {
        return Err(HarnessError::Data(format!(
            "token file is {}x{} with {} classes, model expects {}x{} with {}",
            set.tokens.seq_len(),
            set.tokens.dim(),
            set.num_classes,
            model.seq_len(),
            model.input_token_dim(),
            model.num_classes
        )));
    }
    Ok(())
}

/// Materializes (train, test) splits for the configured source.
pub fn load_splits(cfg: &ExperimentConfig) -> HarnessResult<(SplitData, SplitData)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(spec) => {
            let train = gen_synthetic(spec, MeasureSplit::Train)?;
            let test = gen_synthetic(spec, MeasureSplit::Test)?;
            Ok((train.into_split(), test.into_split()))
        }
        DatasetSpec::Lpds { train, test } => {
            let tr = load_lpds(train)?;
            let te = load_lpds(test)?;
            check_tokens_match(&cfg.model, &tr)?;
            check_tokens_match(&cfg.model, &te)?;
            Ok((tr.into_split(), te.into_split()))
        }
        DatasetSpec::Idx {
            images,
            labels,
            test_images,
            test_labels,
        } => {
            let classes = cfg.model.num_classes;
            let (tr_images, tr_labels) = load_idx(images, labels, classes)?;
            let (te_images, te_labels) = load_idx(test_images, test_labels, classes)?;
            if let InputSpec::Image {
                image_size,
                channels,
                ..
            } = &cfg.model.input
            {
                for imgs in [&tr_images, &te_images] {
                    if imgs.height != *image_size || imgs.width != *image_size {
                        return Err(HarnessError::Data(format!(
                            "IDX images are {}x{}, model expects {image_size}x{image_size}",
                            imgs.height, imgs.width
                        )));
                    }
                    if imgs.channels != *channels {
                        return Err(HarnessError::Data(format!(
                            "IDX images have {} channels, model expects {channels}",
                            imgs.channels
                        )));
                    }
                }
            }
            Ok((
                SplitData {
                    input: InputBatch::Images(tr_images),
                    labels: tr_labels,
                    num_classes: classes,
                },
                SplitData {
                    input: InputBatch::Images(te_images),
                    labels: te_labels,
                    num_classes: classes,
                },
            ))
        }
    }
}

fn normal_vec(rng: &mut RngState, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.normal()).collect()
}

fn unit_vec(rng: &mut RngState, dim: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Class centers on the sphere of radius `center_scale`. Two classes are
/// placed antipodally so the global mean vanishes by symmetry.
pub fn class_centers(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = RngState::new(spec.seed).derive(0);
    if spec.classes == 2 {
        let u = unit_vec(&mut rng, spec.dim);
        let plus: Vec<f64> = u.iter().map(|x| x * spec.center_scale).collect();
        let minus: Vec<f64> = u.iter().map(|x| -x * spec.center_scale).collect();
        return vec![plus, minus];
    }
    (0..spec.classes)
        .map(|_| {
            unit_vec(&mut rng, spec.dim)
                .into_iter()
                .map(|x| x * spec.center_scale)
                .collect()
        })
        .collect()
}

/// Fixed per-position offsets, identical for every sequence in both splits:
/// `position_scale` times a unit direction per token index.
pub fn position_offsets(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = RngState::new(spec.seed).derive(3);
    (0..spec.seq_len)
        .map(|_| {
            unit_vec(&mut rng, spec.dim)
                .into_iter()
                .map(|x| x * spec.position_scale)
                .collect()
        })
        .collect()
}

/// Generate one split. Train and test consume independent streams, so the
/// splits never share noise no matter their sizes.
pub fn gen_synthetic(spec: &SyntheticSpec, split: MeasureSplit) -> HarnessResult<LabeledDataset> {
    spec.validate()?;
    let centers = class_centers(spec);
    let positions = position_offsets(spec);
    let per_class = match split {
        MeasureSplit::Train => spec.per_class,
        MeasureSplit::Test => spec.test_per_class,
    };
    let stream = match split {
        MeasureSplit::Train => 1,
        MeasureSplit::Test => 2,
    };
    let mut rng = RngState::new(spec.seed).derive(stream);

    let batch = spec.classes * per_class;
    let mut data = Vec::with_capacity(batch * spec.seq_len * spec.dim);
    let mut labels = Vec::with_capacity(batch);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let mean: Vec<f64> = center
                .iter()
                .map(|&c| c + spec.class_noise * rng.normal())
                .collect();
            for pos in &positions {
                data.extend(
                    mean.iter()
                        .zip(pos)
                        .map(|(&m, &p)| m + p + spec.seq_noise * rng.normal()),
                );
            }
            labels.push(class);
        }
    }
    let tokens = TokenBatch::new(batch, spec.seq_len, spec.dim, data)?;
    Ok(LabeledDataset {
        tokens,
        labels,
        num_classes: spec.classes,
    })
}

const LPDS_MAGIC: &[u8; 4] = b"LPDS";
const LPDS_VERSION: u32 = 1;

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> HarnessResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HarnessError::Format {
                path: self.path.to_path_buf(),
                offset: self.buf.len() as u64,
                detail: format!(
                    "file truncated: needed {n} bytes for {what} at byte {}",
                    self.pos
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32_le(&mut self, what: &str) -> HarnessResult<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u32_be(&mut self, what: &str) -> HarnessResult<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_end(&self) -> HarnessResult<()> {
        if self.pos != self.buf.len() {
            return Err(HarnessError::Format {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                detail: format!("{} unexpected trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Write a dataset as an LPDS file: `LPDS` magic, version, four u32 shape
/// fields, u32 labels, then row-major f64 token data (all little-endian).
pub fn save_lpds(path: &Path, set: &LabeledDataset) -> HarnessResult<()> {
    let t = &set.tokens;
    let mut out = Vec::with_capacity(28 + 4 * t.batch() + 8 * t.data().len());
    out.extend_from_slice(LPDS_MAGIC);
    out.extend_from_slice(&LPDS_VERSION.to_le_bytes());
    for v in [t.batch(), t.seq_len(), t.dim(), set.num_classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &label in &set.labels {
        out.extend_from_slice(&(label as u32).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

pub fn load_lpds(path: &Path) -> HarnessResult<LabeledDataset> {
    let buf = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = Reader {
        path,
        buf: &buf,
        pos: 0,
    };
    let magic = r.take(4, "magic")?;
    if magic != LPDS_MAGIC {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic {magic:02x?}, expected {LPDS_MAGIC:02x?}"),
        });
    }
    let version = r.u32_le("version")?;
    if version != LPDS_VERSION {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let batch = r.u32_le("batch")? as usize;
    let seq_len = r.u32_le("seq_len")? as usize;
    let dim = r.u32_le("dim")? as usize;
    let num_classes = r.u32_le("num_classes")? as usize;
    let mut labels = Vec::with_capacity(batch);
    for i in 0..batch {
        let label = r.u32_le("label")? as usize;
        if label >= num_classes {
            return Err(HarnessError::Data(format!(
                "label {label} at index {i} out of range for {num_classes} classes"
            )));
        }
        labels.push(label);
    }
    let count = batch * seq_len * dim;
    let raw = r.take(8 * count, "token data")?;
    r.expect_end()?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();
    let tokens = TokenBatch::new(batch, seq_len, dim, data)?;
    Ok(LabeledDataset {
        tokens,
        labels,
        num_classes,
    })
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label file pair (the MNIST layout): big-endian magics
/// 0x803 / 0x801, big-endian dimension fields, u8 payload. Pixels are scaled
/// to [0, 1]; labels are checked against `num_classes`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    num_classes: usize,
) -> HarnessResult<(ImageBatch, Vec<usize>)> {
    let buf = fs::read(images_path).map_err(|e| HarnessError::io(images_path, e))?;
    let mut r = Reader {
        path: images_path,
        buf: &buf,
        pos: 0,
    };
    let magic = r.u32_be("magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(HarnessError::Format {
            path: images_path.to_path_buf(),
            offset: 0,
            detail: format!("bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let count = r.u32_be("image count")? as usize;
    let rows = r.u32_be("rows")? as usize;
    let cols = r.u32_be("cols")? as usize;
    let pixels = r.take(count * rows * cols, "pixel data")?;
    r.expect_end()?;
    let data: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();

    let lbuf = fs::read(labels_path).map_err(|e| HarnessError::io(labels_path, e))?;
    let mut lr = Reader {
        path: labels_path,
        buf: &lbuf,
        pos: 0,
    };
    let lmagic = lr.u32_be("magic")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(HarnessError::Format {
            path: labels_path.to_path_buf(),
            offset: 0,
            detail: format!("bad label magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        });
    }
    let label_count = lr.u32_be("label count")? as usize;
    if label_count != count {
        return Err(HarnessError::Data(format!(
            "{label_count} labels for {count} images"
        )));
    }
    let raw_labels = lr.take(label_count, "labels")?;
    lr.expect_end()?;
    let mut labels = Vec::with_capacity(label_count);
    for (i, &l) in raw_labels.iter().enumerate() {
        let label = l as usize;
        if label >= num_classes {
            return Err(HarnessError::Data(format!(
                "label {label} at index {i} out of range for {num_classes} classes"
            )));
        }
        labels.push(label);
    }
    let images = ImageBatch::new(count, rows, cols, 1, data)?;
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lapform_geometry::{anova_decompose, ClassAveraging, LabeledTokenSet};

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            per_class: 5,
            test_per_class: 2,
            seq_len: 4,
            dim: 6,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn shapes_labels_and_determinism() {
        let spec = small_spec();
        let train = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        assert_eq!(train.tokens.batch(), 15);
        assert_eq!(train.tokens.seq_len(), 4);
        assert_eq!(train.tokens.dim(), 6);
        assert_eq!(train.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);

        let again = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        assert_eq!(train.tokens.data(), again.tokens.data());

        let test = gen_synthetic(&spec, MeasureSplit::Test).unwrap();
        assert_eq!(test.tokens.batch(), 6);
        assert_ne!(&train.tokens.data()[..8], &test.tokens.data()[..8]);
    }

    #[test]
    fn zero_noise_collapses_within_variances() {
        let spec = SyntheticSpec {
            class_noise: 0.0,
            seq_noise: 0.0,
            position_scale: 0.0,
            ..small_spec()
        };
        let set = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        let labeled =
            LabeledTokenSet::new(set.tokens.clone(), set.labels.clone(), set.num_classes).unwrap();
        let anova = anova_decompose(&labeled, ClassAveraging::CountWeighted).unwrap();
        assert!(anova.within_seq.abs() <= 1e-20);
        assert!(anova.within_class.abs() <= 1e-20);
        assert!(anova.between_class > 1.0);
    }

    #[test]
    fn two_classes_sit_antipodally() {
        let spec = SyntheticSpec {
            classes: 2,
            per_class: 50,
            class_noise: 0.0,
            seq_noise: 0.0,
            position_scale: 0.0,
            ..small_spec()
        };
        let centers = class_centers(&spec);
        for (a, b) in centers[0].iter().zip(&centers[1]) {
            assert!((a + b).abs() <= 1e-12);
        }
        let set = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        let d = set.tokens.dim();
        let mut mean = vec![0.0; d];
        for b in 0..set.tokens.batch() {
            for t in 0..set.tokens.seq_len() {
                for (m, x) in mean.iter_mut().zip(set.tokens.token(b, t)) {
                    *m += x;
                }
            }
        }
        let n = (set.tokens.batch() * set.tokens.seq_len()) as f64;
        for m in &mean {
            assert!((m / n).abs() <= 1e-10, "global mean {}", m / n);
        }
    }

    #[test]
    fn position_offsets_are_shared_and_carry_the_within_seq_variance() {
        // With all noise off, tokens are center + offset exactly, so the
        // within-sequence variance equals the offsets' own spread.
        let spec = SyntheticSpec {
            class_noise: 0.0,
            seq_noise: 0.0,
            position_scale: 1.7,
            ..small_spec()
        };
        let offsets = position_offsets(&spec);
        assert_eq!(offsets.len(), spec.seq_len);
        for off in &offsets {
            let norm = off.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.7).abs() <= 1e-12);
        }

        let train = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        let test = gen_synthetic(&spec, MeasureSplit::Test).unwrap();
        // Identical offsets in both splits: position i of any two sequences
        // differs only by the class center.
        let t0_train: Vec<f64> = train.tokens.token(0, 2).to_vec();
        let t0_test: Vec<f64> = test.tokens.token(0, 2).to_vec();
        assert_eq!(t0_train, t0_test);

        let t = spec.seq_len as f64;
        let mut mean = vec![0.0; spec.dim];
        for off in &offsets {
            for (m, o) in mean.iter_mut().zip(off) {
                *m += o / t;
            }
        }
        let expected: f64 = offsets
            .iter()
            .map(|off| {
                off.iter()
                    .zip(&mean)
                    .map(|(o, m)| (o - m) * (o - m))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / t;
        let labeled =
            LabeledTokenSet::new(train.tokens.clone(), train.labels.clone(), train.num_classes)
                .unwrap();
        let anova = anova_decompose(&labeled, ClassAveraging::CountWeighted).unwrap();
        assert!((anova.within_seq - expected).abs() <= 1e-9 * expected.max(1.0));
        assert!(anova.within_class.abs() <= 1e-18);
    }

    #[test]
    fn center_radius_matches_scale() {
        let spec = SyntheticSpec {
            classes: 5,
            center_scale: 2.5,
            ..small_spec()
        };
        for center in class_centers(&spec) {
            let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 2.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn sample_variances_match_noise_scales() {
        // With per-sequence means m = c + s_cl*g and tokens x = m + s_sq*e:
        //   E within_seq  = s_sq^2 * d * (1 - 1/T)
        //   E within_class = (s_cl^2 + s_sq^2/T) * d * (1 - 1/N_c)
        let spec = SyntheticSpec {
            classes: 2,
            per_class: 640,
            seq_len: 8,
            dim: 4,
            center_scale: 3.0,
            class_noise: 0.7,
            seq_noise: 1.1,
            position_scale: 0.0,
            ..SyntheticSpec::default()
        };
        let set = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        let labeled =
            LabeledTokenSet::new(set.tokens.clone(), set.labels.clone(), set.num_classes).unwrap();
        let anova = anova_decompose(&labeled, ClassAveraging::CountWeighted).unwrap();

        let d = spec.dim as f64;
        let t = spec.seq_len as f64;
        let nc = spec.per_class as f64;
        let s_sq2 = spec.seq_noise * spec.seq_noise;
        let s_cl2 = spec.class_noise * spec.class_noise;
        let expect_within_seq = s_sq2 * d * (1.0 - 1.0 / t);
        let expect_within_class = (s_cl2 + s_sq2 / t) * d * (1.0 - 1.0 / nc);
        assert!(
            (anova.within_seq - expect_within_seq).abs() <= 0.05 * expect_within_seq,
            "within_seq {} vs {}",
            anova.within_seq,
            expect_within_seq
        );
        assert!(
            (anova.within_class - expect_within_class).abs() <= 0.05 * expect_within_class,
            "within_class {} vs {}",
            anova.within_class,
            expect_within_class
        );
    }

    #[test]
    fn lpds_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.lpds");
        let set = gen_synthetic(&small_spec(), MeasureSplit::Test).unwrap();
        save_lpds(&path, &set).unwrap();
        let back = load_lpds(&path).unwrap();
        assert_eq!(back.tokens.batch(), set.tokens.batch());
        assert_eq!(back.tokens.seq_len(), set.tokens.seq_len());
        assert_eq!(back.tokens.dim(), set.tokens.dim());
        assert_eq!(back.labels, set.labels);
        assert_eq!(back.num_classes, set.num_classes);
        assert_eq!(back.tokens.data(), set.tokens.data());
    }

    #[test]
    fn lpds_truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.lpds");
        let set = gen_synthetic(&small_spec(), MeasureSplit::Test).unwrap();
        save_lpds(&path, &set).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        match load_lpds(&path).unwrap_err() {
            HarnessError::Format { offset, detail, .. } => {
                assert_eq!(offset, bytes.len() as u64);
                assert!(detail.contains("truncated"));
            }
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn lpds_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lpds");
        fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        match load_lpds(&path).unwrap_err() {
            HarnessError::Format { offset, detail, .. } => {
                assert_eq!(offset, 0);
                assert!(detail.contains("bad magic"));
            }
            other => panic!("expected format error, got {other}"),
        }
    }

    fn write_idx_pair(dir: &Path, labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let n = labels.len() as u32;
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&n.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for i in 0..(labels.len() * 4) {
            img.push((i * 17 % 256) as u8);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        lab.extend_from_slice(&n.to_be_bytes());
        lab.extend_from_slice(labels);
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_fixture_loads_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[1, 0, 2, 1]);
        let (images, labels) = load_idx(&ip, &lp, 3).unwrap();
        assert_eq!(images.count, 4);
        assert_eq!(images.height, 2);
        assert_eq!(images.width, 2);
        assert_eq!(images.channels, 1);
        assert_eq!(labels, vec![1, 0, 2, 1]);
        for (i, &x) in images.data.iter().enumerate() {
            assert_eq!(x, f64::from((i * 17 % 256) as u8) / 255.0);
        }
    }

    #[test]
    fn idx_empty_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("empty.idx");
        fs::write(&ip, b"").unwrap();
        match load_idx(&ip, &ip, 3).unwrap_err() {
            HarnessError::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn idx_label_out_of_range_names_the_index() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[0, 1, 7, 1]);
        match load_idx(&ip, &lp, 3).unwrap_err() {
            HarnessError::Data(msg) => {
                assert!(msg.contains("label 7"), "{msg}");
                assert!(msg.contains("index 2"), "{msg}");
            }
            other => panic!("expected data error, got {other}"),
        }
    }

    #[test]
    fn idx_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("other");
        fs::create_dir(&sub).unwrap();
        let (ip, _) = write_idx_pair(dir.path(), &[0, 1, 2, 1]);
        let (_, lp) = write_idx_pair(&sub, &[0, 1]);
        match load_idx(&ip, &lp, 3).unwrap_err() {
            HarnessError::Data(msg) => assert!(msg.contains("labels for")),
            other => panic!("expected data error, got {other}"),
        }
    }
}
