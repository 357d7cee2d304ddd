use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{Activation, NetSpec, TargetNet};
use crate::error::{invalid, Result};
use crate::linalg::Mat;

/// Samples per training batch; the calibration set is one such batch.
pub const BATCH_SIZE: usize = 32;
/// Smallest dataset accepted by [`gen_teacher_student`].
pub const MIN_SAMPLES: usize = 64;
/// Fraction of samples in the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

const MAGIC: &[u8; 8] = b"QADATA\0\0";
const FORMAT_VERSION: u32 = 1;

/// Regression samples with train / calibration / validation index sets.
/// The calibration set is the first training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub noise_std: f64,
    pub inputs: Mat<f64>,
    pub targets: Mat<f64>,
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` of the inputs and targets.
    pub fn batch(&self, idx: &[usize]) -> (Mat<f64>, Mat<f64>) {
        let x = Mat::from_fn(idx.len(), self.inputs.cols(), |i, j| self.inputs[(idx[i], j)]);
        let y = Mat::from_fn(idx.len(), self.targets.cols(), |i, j| self.targets[(idx[i], j)]);
        (x, y)
    }

    pub fn calib_batch(&self) -> (Mat<f64>, Mat<f64>) {
        self.batch(&self.calib)
    }

    pub fn val_batch(&self) -> (Mat<f64>, Mat<f64>) {
        self.batch(&self.val)
    }

    pub fn train_batch(&self) -> (Mat<f64>, Mat<f64>) {
        self.batch(&self.train)
    }
}

/// Standard-normal inputs labelled by a random teacher network plus Gaussian
/// noise. The teacher is returned as well: it is the frozen network whose
/// layers get quantized.
pub fn gen_teacher_student(seed: u64, n_samples: usize, noise_std: f64) -> Result<(TargetNet, Dataset)> {
    gen_teacher_student_with(NetSpec::default(), seed, n_samples, noise_std)
}

pub fn gen_teacher_student_with(
    spec: NetSpec,
    seed: u64,
    n_samples: usize,
    noise_std: f64,
) -> Result<(TargetNet, Dataset)> {
    if n_samples < MIN_SAMPLES {
        return Err(invalid(format!("need at least {MIN_SAMPLES} samples, got {n_samples}")));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(invalid(format!("noise std {noise_std} must be finite and non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = TargetNet::random(spec, &mut rng)?;
    let inputs = Mat::randn(n_samples, spec.in_dim, 1.0, &mut rng);
    let mut targets = net.forward(&inputs);
    if noise_std > 0.0 {
        targets.add_assign(&Mat::randn(n_samples, spec.out_dim, noise_std, &mut rng));
    }
    let n_train = (TRAIN_FRACTION * n_samples as f64).floor() as usize;
    let data = Dataset {
        seed,
        noise_std,
        inputs,
        targets,
        train: (0..n_train).collect(),
        calib: (0..BATCH_SIZE).collect(),
        val: (n_train..n_samples).collect(),
    };
    Ok((net, data))
}

fn write_mat(w: &mut impl Write, m: &Mat<f64>) -> Result<()> {
    w.write_u64::<LittleEndian>(m.rows() as u64)?;
    w.write_u64::<LittleEndian>(m.cols() as u64)?;
    for &x in m.as_slice() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_mat(r: &mut impl Read) -> Result<Mat<f64>> {
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let cols = r.read_u64::<LittleEndian>()? as usize;
    if rows.saturating_mul(cols) > 1 << 28 {
        return Err(invalid(format!("implausible matrix size {rows}x{cols}")));
    }
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Mat::from_vec(rows, cols, data)
}

fn write_indices(w: &mut impl Write, idx: &[usize]) -> Result<()> {
    w.write_u64::<LittleEndian>(idx.len() as u64)?;
    for &i in idx {
        w.write_u64::<LittleEndian>(i as u64)?;
    }
    Ok(())
}

fn read_indices(r: &mut impl Read, bound: usize) -> Result<Vec<usize>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    if len > bound {
        return Err(invalid("index list longer than the dataset"));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let i = r.read_u64::<LittleEndian>()? as usize;
        if i >= bound {
            return Err(invalid(format!("sample index {i} out of range")));
        }
        out.push(i);
    }
    Ok(out)
}

/// Writes the network and dataset in a little-endian binary layout.
pub fn write_data(w: &mut impl Write, net: &TargetNet, data: &Dataset) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(data.seed)?;
    w.write_f64::<LittleEndian>(data.noise_std)?;
    let s = &net.spec;
    for v in [s.in_dim, s.width, s.out_dim, s.num_layers] {
        w.write_u64::<LittleEndian>(v as u64)?;
    }
    w.write_u8(match s.activation {
        Activation::Tanh => 0,
        Activation::Identity => 1,
    })?;
    for layer in &net.layers {
        write_mat(w, layer)?;
    }
    write_mat(w, &data.inputs)?;
    write_mat(w, &data.targets)?;
    write_indices(w, &data.train)?;
    write_indices(w, &data.calib)?;
    write_indices(w, &data.val)?;
    Ok(())
}

pub fn read_data(r: &mut impl Read) -> Result<(TargetNet, Dataset)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a dataset file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(invalid(format!("unsupported dataset version {version}")));
    }
    let seed = r.read_u64::<LittleEndian>()?;
    let noise_std = r.read_f64::<LittleEndian>()?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.read_u64::<LittleEndian>()? as usize;
    }
    let activation = match r.read_u8()? {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        a => return Err(invalid(format!("unknown activation tag {a}"))),
    };
    let spec = NetSpec {
        in_dim: dims[0],
        width: dims[1],
        out_dim: dims[2],
        num_layers: dims[3],
        activation,
    };
    spec.validate()?;
    if spec.num_layers > 1024 {
        return Err(invalid("implausible layer count"));
    }
    let layers = (0..spec.num_layers)
        .map(|_| read_mat(r))
        .collect::<Result<Vec<_>>>()?;
    let net = TargetNet::from_layers(spec, layers)?;
    let inputs = read_mat(r)?;
    let targets = read_mat(r)?;
    if inputs.cols() != spec.in_dim || targets.cols() != spec.out_dim || inputs.rows() != targets.rows() {
        return Err(invalid("dataset matrices do not match the network"));
    }
    let n = inputs.rows();
    let data = Dataset {
        seed,
        noise_std,
        inputs,
        targets,
        train: read_indices(r, n)?,
        calib: read_indices(r, n)?,
        val: read_indices(r, n)?,
    };
    Ok((net, data))
}
