//! Dense tensor container and its binary file format.
//!
//! Every stage of the pipeline passes data around as [`Tensor`]: a row-major
//! flat buffer plus a shape. Files use a fixed little-endian layout so that
//! round trips are bit-exact and golden files stay stable across platforms:
//!
//! ```text
//! magic  "YT01"            4 bytes
//! dtype  u8                0 = f32, 1 = f64, 2 = u8
//! ndim   u8                at most 8
//! dims   ndim x u64 LE     every dim >= 1
//! data   row-major payload, little-endian
//! ```
//!
//! Masks are stored as u8 tensors containing only {0, 1} — no float
//! thresholds anywhere. [`synth_case`] generates the deterministic random
//! video/mask pairs used by the trainer, the benchmark harness, and tests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest number of dimensions the file format carries.
pub const MAX_NDIM: usize = 8;

const MAGIC: [u8; 4] = *b"YT01";

/// Dense row-major tensor. The shape product always equals the buffer length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    /// Wraps a flat buffer, checking that the shape accounts for every element.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} implies {} elements, buffer holds {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, T::default())
    }
}

/// Element types the file format can carry.
pub trait Element: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const DTYPE_CODE: u8;
    const BYTE_SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE_CODE: u8 = 0;
    const BYTE_SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE_CODE: u8 = 1;
    const BYTE_SIZE: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Element for u8 {
    const DTYPE_CODE: u8 = 2;
    const BYTE_SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// Parsed file header: dtype code plus dimension sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFileHeader {
    pub dtype_code: u8,
    pub dims: Vec<u64>,
}

impl TensorFileHeader {
    fn validate(&self) -> Result<()> {
        if self.dims.len() > MAX_NDIM {
            return Err(Error::format(format!(
                "too many dimensions: {} exceeds the limit of {}",
                self.dims.len(),
                MAX_NDIM
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::format(format!(
                "dims must be ≥ 1, got {:?}",
                self.dims
            )));
        }
        if self.dtype_code > 2 {
            return Err(Error::format(format!(
                "unknown dtype code {} (expected 0=f32, 1=f64, 2=u8)",
                self.dtype_code
            )));
        }
        Ok(())
    }
}

/// Tensor of any supported dtype, as read back from a file.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::U8(t) => t.shape(),
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            AnyTensor::F32(_) => "f32",
            AnyTensor::F64(_) => "f64",
            AnyTensor::U8(_) => "u8",
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            AnyTensor::F32(t) => Ok(t),
            other => Err(Error::invalid(format!(
                "expected an f32 tensor, found {}",
                other.dtype_name()
            ))),
        }
    }

    pub fn into_f64(self) -> Result<Tensor<f64>> {
        match self {
            AnyTensor::F64(t) => Ok(t),
            other => Err(Error::invalid(format!(
                "expected an f64 tensor, found {}",
                other.dtype_name()
            ))),
        }
    }

    pub fn into_u8(self) -> Result<Tensor<u8>> {
        match self {
            AnyTensor::U8(t) => Ok(t),
            other => Err(Error::invalid(format!(
                "expected a u8 tensor, found {}",
                other.dtype_name()
            ))),
        }
    }
}

/// Writes a tensor to `path` in the YT01 layout. Bit-exact: loading the file
/// reproduces the tensor down to the payload bytes.
pub fn save_tensor<T: Element>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let header = TensorFileHeader {
        dtype_code: T::DTYPE_CODE,
        dims: t.shape().iter().map(|&d| d as u64).collect(),
    };
    header.validate()?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[header.dtype_code, header.dims.len() as u8])?;
    for &d in &header.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.numel() * T::BYTE_SIZE);
    for &x in t.data() {
        x.write_le(&mut payload);
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn save_any(t: &AnyTensor, path: impl AsRef<Path>) -> Result<()> {
    match t {
        AnyTensor::F32(t) => save_tensor(t, path),
        AnyTensor::F64(t) => save_tensor(t, path),
        AnyTensor::U8(t) => save_tensor(t, path),
    }
}

/// Reads a YT01 file, dispatching on the header dtype.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "truncated header")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&MAGIC)
        )));
    }

    let mut meta = [0u8; 2];
    read_exact_or(&mut r, &mut meta, "truncated header")?;
    let (dtype_code, ndim) = (meta[0], meta[1] as usize);
    if ndim > MAX_NDIM {
        return Err(Error::format(format!(
            "too many dimensions: {} exceeds the limit of {}",
            ndim, MAX_NDIM
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut buf = [0u8; 8];
        read_exact_or(&mut r, &mut buf, "truncated header")?;
        dims.push(u64::from_le_bytes(buf));
    }
    let header = TensorFileHeader { dtype_code, dims };
    header.validate()?;

    match header.dtype_code {
        0 => Ok(AnyTensor::F32(read_payload::<f32>(&mut r, &header)?)),
        1 => Ok(AnyTensor::F64(read_payload::<f64>(&mut r, &header)?)),
        _ => Ok(AnyTensor::U8(read_payload::<u8>(&mut r, &header)?)),
    }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_payload<T: Element>(r: &mut impl Read, header: &TensorFileHeader) -> Result<Tensor<T>> {
    let shape: Vec<usize> = header.dims.iter().map(|&d| d as usize).collect();
    let numel: usize = shape.iter().product();
    let mut bytes = vec![0u8; numel * T::BYTE_SIZE];
    read_exact_or(
        r,
        &mut bytes,
        &format!("truncated payload: expected {} bytes", numel * T::BYTE_SIZE),
    )?;
    let data = bytes
        .chunks_exact(T::BYTE_SIZE)
        .map(T::read_le)
        .collect::<Vec<_>>();
    Tensor::new(shape, data)
}

/// Deterministic synthetic inpainting case: a pseudo-random video in
/// `[-1, 1)` shaped `[1, channels, frames, height, width]` and a binary mask
/// shaped `[1, 1, frames, height, width]` built as a union of axis-aligned
/// boxes. The masked fraction is the closest achievable to `mask_ratio`
/// (exactly `round(ratio * voxels)` cells). Same seed, same output.
pub fn synth_case(
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    mask_ratio: f64,
) -> Result<(Tensor<f32>, Tensor<u8>)> {
    if frames == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "zero-sized dimension: frames={frames} height={height} width={width} channels={channels}"
        )));
    }
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::invalid(format!(
            "mask_ratio must lie in [0, 1], got {mask_ratio}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let video_len = channels * frames * height * width;
    let video_data: Vec<f32> = (0..video_len)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let video = Tensor::new(vec![1, channels, frames, height, width], video_data)?;

    let total = frames * height * width;
    let target = (mask_ratio * total as f64).round() as usize;
    let mut mask = vec![0u8; total];
    let mut ones = 0usize;
    let mut stalls = 0u32;
    let cell = |f: usize, y: usize, x: usize| (f * height + y) * width + x;

    while ones < target {
        let deficit = target - ones;
        // Draw a random box, then shrink it so its volume never exceeds the
        // remaining deficit — the union can approach the target but not
        // overshoot it.
        let df = rng.random_range(1..=frames).min(deficit);
        let dh = rng.random_range(1..=height).min((deficit / df).max(1));
        let dw = rng.random_range(1..=width).min((deficit / (df * dh)).max(1));
        let f0 = rng.random_range(0..=frames - df);
        let y0 = rng.random_range(0..=height - dh);
        let x0 = rng.random_range(0..=width - dw);

        let mut added = 0usize;
        for f in f0..f0 + df {
            for y in y0..y0 + dh {
                for x in x0..x0 + dw {
                    let c = cell(f, y, x);
                    if mask[c] == 0 {
                        mask[c] = 1;
                        added += 1;
                    }
                }
            }
        }
        ones += added;

        // Dense masks make fresh boxes land on covered ground; after a few
        // wasted draws, fill the exact remainder by scanning from a random
        // offset.
        stalls = if added == 0 { stalls + 1 } else { 0 };
        if stalls >= 16 {
            let start = rng.random_range(0..total);
            for i in 0..total {
                if ones == target {
                    break;
                }
                let c = (start + i) % total;
                if mask[c] == 0 {
                    mask[c] = 1;
                    ones += 1;
                }
            }
        }
    }

    let mask = Tensor::new(vec![1, 1, frames, height, width], mask)?;
    Ok((video, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn scalar_f32_file_is_18_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scalar.yt");
        let t = Tensor::new(vec![1], vec![3.0f32]).unwrap();
        save_tensor(&t, &path).unwrap();
        // 4 magic + 1 dtype + 1 ndim + 8 dim + 4 payload
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 18);
        assert_eq!(load_tensor(&path).unwrap().into_f32().unwrap(), t);
    }

    #[test]
    fn zero_dim_is_rejected() {
        let dir = tempdir().unwrap();
        let t = Tensor::new(vec![0], Vec::<f32>::new()).unwrap();
        let err = save_tensor(&t, dir.path().join("bad.yt")).unwrap_err();
        assert!(err.to_string().contains("dims must be ≥ 1"), "{err}");
    }

    #[test]
    fn too_many_dims_is_rejected() {
        let dir = tempdir().unwrap();
        let t = Tensor::new(vec![1; 9], vec![0.0f32]).unwrap();
        let err = save_tensor(&t, dir.path().join("bad.yt")).unwrap_err();
        assert!(err.to_string().contains("too many dimensions"), "{err}");
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.yt");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..24).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t = Tensor::new(vec![2, 3, 4], data).unwrap();
        save_tensor(&t, &path).unwrap();
        let back = load_tensor(&path).unwrap().into_f64().unwrap();
        assert_eq!(back.shape(), t.shape());
        let same_bits = back
            .data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits);
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.yt");
        let t = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        save_tensor(&t, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let err = load_tensor(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.yt");
        let t = Tensor::new(vec![2, 2], vec![1.0f32; 4]).unwrap();
        save_tensor(&t, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_tensor(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn unknown_dtype_code_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.yt");
        let t = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        save_tensor(&t, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 7;
        std::fs::write(&path, bytes).unwrap();
        let err = load_tensor(&path).unwrap_err();
        assert!(err.to_string().contains("unknown dtype code"), "{err}");
    }

    #[test]
    fn synth_case_is_deterministic() {
        let (v1, m1) = synth_case(42, 4, 16, 16, 3, 0.3).unwrap();
        let (v2, m2) = synth_case(42, 4, 16, 16, 3, 0.3).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(m1, m2);
        let (v3, _) = synth_case(43, 4, 16, 16, 3, 0.3).unwrap();
        assert_ne!(v1, v3);
    }

    #[test]
    fn synth_case_extremes() {
        let (_, m0) = synth_case(1, 2, 8, 8, 1, 0.0).unwrap();
        assert!(m0.data().iter().all(|&b| b == 0));
        let (_, m1) = synth_case(1, 2, 8, 8, 1, 1.0).unwrap();
        assert!(m1.data().iter().all(|&b| b == 1));
    }

    #[test]
    fn synth_case_hits_requested_ratio() {
        let (video, mask) = synth_case(7, 4, 32, 32, 3, 0.2).unwrap();
        let ones = mask.data().iter().filter(|&&b| b == 1).count();
        let frac = ones as f64 / mask.numel() as f64;
        assert!((0.18..=0.22).contains(&frac), "fraction {frac}");
        assert!(mask.data().iter().all(|&b| b <= 1));
        assert!(video.data().iter().all(|&x| (-1.0..1.0).contains(&x)));
    }

    #[test]
    fn synth_case_rejects_bad_args() {
        assert!(synth_case(0, 0, 4, 4, 1, 0.5).is_err());
        assert!(synth_case(0, 2, 4, 4, 1, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_any_shape_f32(
            shape in proptest::collection::vec(1usize..6, 1..5),
            seed in 0u64..1000,
        ) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.yt");
            let numel: usize = shape.iter().product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..numel).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            let t = Tensor::new(shape, data).unwrap();
            save_tensor(&t, &path).unwrap();
            prop_assert_eq!(load_tensor(&path).unwrap().into_f32().unwrap(), t);
        }

        #[test]
        fn round_trip_any_shape_u8(
            shape in proptest::collection::vec(1usize..6, 1..5),
            seed in 0u64..1000,
        ) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.yt");
            let numel: usize = shape.iter().product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<u8> = (0..numel).map(|_| rng.random_range(0u8..=1)).collect();
            let t = Tensor::new(shape, data).unwrap();
            save_tensor(&t, &path).unwrap();
            prop_assert_eq!(load_tensor(&path).unwrap().into_u8().unwrap(), t);
        }

        #[test]
        fn synth_fraction_tracks_ratio(seed in 0u64..50, ratio in 0.0f64..1.0) {
            let (_, mask) = synth_case(seed, 3, 16, 16, 1, ratio).unwrap();
            let ones = mask.data().iter().filter(|&&b| b == 1).count();
            let frac = ones as f64 / mask.numel() as f64;
            prop_assert!((frac - ratio).abs() <= 0.02, "frac {frac} vs ratio {ratio}");
        }
    }
}
