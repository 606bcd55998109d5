//! Dense voxel grids and their raw on-disk format.
//!
//! Every grid is stored x-fastest: the voxel `(x, y, z)` lives at linear
//! index `x + nx * (y + ny * z)`. The raw format is a little-endian payload
//! `<name>.vol` plus a JSON sidecar `<name>.vol.json`:
//!
//! ```json
//! {"dims":[nx,ny,nz],"dtype":"f32","spacing":[sx,sy,sz]}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        [x, y, z]
    }

    /// Signed lookup; `None` when the coordinate falls outside the grid.
    #[inline]
    pub fn checked_index(&self, x: isize, y: isize, z: isize) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        (x < self.nx && y < self.ny && z < self.nz).then(|| self.index(x, y, z))
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn contains(&self, p: [isize; 3]) -> bool {
        self.checked_index(p[0], p[1], p[2]).is_some()
    }
}

impl From<[usize; 3]> for Dims {
    fn from(d: [usize; 3]) -> Self {
        Self::new(d[0], d[1], d[2])
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Physical size of a voxel along each axis.
pub type Spacing = [f64; 3];

pub const UNIT_SPACING: Spacing = [1.0, 1.0, 1.0];

/// Axis selector for augmentation flips.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A dense 3-D grid of `T`, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

/// Scalar volume: CT-like intensities or soft predictions.
pub type Volume3 = Grid<f32>;

/// Binary volume with values in `{0, 1}`.
pub type Mask3 = Grid<u8>;

impl<T: Copy> Grid<T> {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn at(&self, index: usize) -> T {
        self.data[index]
    }

    fn filled(dims: Dims, value: T) -> Self {
        Self {
            dims,
            spacing: UNIT_SPACING,
            data: vec![value; dims.len()],
        }
    }

    fn unchecked(dims: Dims, spacing: Spacing, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self {
            dims,
            spacing,
            data,
        }
    }

    fn check_len(dims: Dims, len: usize) -> Result<()> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument(format!("dims {dims} must be positive")));
        }
        if dims.len() != len {
            return Err(Error::shape(
                "Grid::from_vec",
                format!("data length {len} != {dims} = {}", dims.len()),
            ));
        }
        Ok(())
    }

    /// Reverses voxel order along `axis`. Only x and y may be flipped.
    pub fn flip(&self, axis: Axis) -> Result<Self> {
        let d = self.dims;
        let mut out = Vec::with_capacity(self.data.len());
        match axis {
            Axis::X => {
                for row in self.data.chunks_exact(d.nx) {
                    out.extend(row.iter().rev());
                }
            }
            Axis::Y => {
                for slab in self.data.chunks_exact(d.nx * d.ny) {
                    for row in slab.chunks_exact(d.nx).rev() {
                        out.extend_from_slice(row);
                    }
                }
            }
            Axis::Z => {
                return Err(Error::InvalidArgument(
                    "flips along z are not supported; only x and y".into(),
                ))
            }
        }
        Ok(Self::unchecked(d, self.spacing, out))
    }

    /// Copies the sub-box starting at `origin` with extent `size`.
    pub fn crop(&self, origin: [usize; 3], size: Dims) -> Result<Self> {
        let d = self.dims;
        for a in 0..3 {
            if origin[a] + size.as_array()[a] > d.as_array()[a] {
                return Err(Error::shape(
                    "crop",
                    format!("box {origin:?}+{size} exceeds {d}"),
                ));
            }
        }
        let mut out = Vec::with_capacity(size.len());
        for z in 0..size.nz {
            for y in 0..size.ny {
                let start = d.index(origin[0], origin[1] + y, origin[2] + z);
                out.extend_from_slice(&self.data[start..start + size.nx]);
            }
        }
        Ok(Self::unchecked(size, self.spacing, out))
    }

    /// Reflect-pads (mirror without edge repetition) up to at least `min_dims`.
    /// Returns the grid unchanged when it is already large enough.
    pub fn reflect_pad(&self, min_dims: Dims) -> Self {
        let d = self.dims;
        let nd = Dims::new(
            d.nx.max(min_dims.nx),
            d.ny.max(min_dims.ny),
            d.nz.max(min_dims.nz),
        );
        if nd == d {
            return self.clone();
        }
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let r = i % period;
            if r < n {
                r
            } else {
                period - r
            }
        };
        let mut out = Vec::with_capacity(nd.len());
        for z in 0..nd.nz {
            let sz = reflect(z, d.nz);
            for y in 0..nd.ny {
                let sy = reflect(y, d.ny);
                for x in 0..nd.nx {
                    out.push(self.data[d.index(reflect(x, d.nx), sy, sz)]);
                }
            }
        }
        Self::unchecked(nd, self.spacing, out)
    }

    pub(crate) fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid::unchecked(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }
}

impl Volume3 {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn constant(dims: Dims, value: f32) -> Result<Self> {
        Self::from_vec(dims, vec![value; dims.len()])
    }

    /// Builds a volume, rejecting wrong lengths and non-finite values.
    pub fn from_vec(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::check_len(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at voxel {i}")));
        }
        Ok(Self::unchecked(dims, UNIT_SPACING, data))
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// `out[i] = self[i] * mask[i]`.
    pub fn elementwise_product(&self, mask: &Mask3) -> Result<Volume3> {
        if self.dims != mask.dims {
            return Err(Error::shape(
                "elementwise_product",
                format!("volume {} vs mask {}", self.dims, mask.dims),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&mask.data)
            .map(|(&v, &m)| v * f32::from(m))
            .collect();
        Ok(Self::unchecked(self.dims, self.spacing, data))
    }

    /// Voxels strictly above `threshold` become foreground.
    pub fn threshold(&self, threshold: f32) -> Mask3 {
        self.map(|v| u8::from(v > threshold))
    }
}

impl Mask3 {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0)
    }

    pub fn ones(dims: Dims) -> Self {
        Self::filled(dims, 1)
    }

    /// Builds a mask, rejecting wrong lengths and values outside `{0, 1}`.
    pub fn from_vec(dims: Dims, data: Vec<u8>) -> Result<Self> {
        Self::check_len(dims, data.len())?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!(
                "mask value {} at voxel {i} is not 0 or 1",
                data[i]
            )));
        }
        Ok(Self::unchecked(dims, UNIT_SPACING, data))
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(u8::from(f(x, y, z)));
                }
            }
        }
        Self::unchecked(dims, UNIT_SPACING, data)
    }

    #[inline]
    pub fn is_set(&self, x: usize, y: usize, z: usize) -> bool {
        self.get(x, y, z) != 0
    }

    /// Signed lookup; out-of-range coordinates read as background.
    #[inline]
    pub fn is_set_signed(&self, x: isize, y: isize, z: isize) -> bool {
        self.dims
            .checked_index(x, y, z)
            .is_some_and(|i| self.data[i] != 0)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, on: bool) {
        let i = self.dims.index(x, y, z);
        self.data[i] = u8::from(on);
    }

    #[inline]
    pub fn set_index(&mut self, index: usize, on: bool) {
        self.data[index] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Linear indices of foreground voxels, ascending.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v != 0).then_some(i))
    }

    pub fn to_volume(&self) -> Volume3 {
        self.map(f32::from)
    }

    fn zip_with(&self, other: &Mask3, op: &'static str, f: impl Fn(u8, u8) -> u8) -> Result<Mask3> {
        if self.dims != other.dims {
            return Err(Error::shape(op, format!("{} vs {}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::unchecked(self.dims, self.spacing, data))
    }

    pub fn and(&self, other: &Mask3) -> Result<Mask3> {
        self.zip_with(other, "and", |a, b| a & b)
    }

    pub fn or(&self, other: &Mask3) -> Result<Mask3> {
        self.zip_with(other, "or", |a, b| a | b)
    }

    pub fn and_not(&self, other: &Mask3) -> Result<Mask3> {
        self.zip_with(other, "and_not", |a, b| a & (1 - b))
    }

    /// `true` when every foreground voxel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask3) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }
}

/// Element types with a raw on-disk encoding.
pub trait RawElement: Copy + Sized {
    const DTYPE: &'static str;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl RawElement for f32 {
    const DTYPE: &'static str = "f32";
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl RawElement for u8 {
    const DTYPE: &'static str = "u8";
    const SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// Contents of the `.vol.json` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub dtype: String,
    pub spacing: [f64; 3],
}

/// Path of the sidecar belonging to a payload path.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads only the sidecar of a raw grid.
pub fn read_header(path: impl AsRef<Path>) -> Result<RawHeader> {
    let side = sidecar_path(path.as_ref());
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&side, e))
}

impl<T: RawElement> Grid<T> {
    /// Writes the payload and its sidecar.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.data.len() * T::SIZE);
        for &v in &self.data {
            v.write_le(&mut bytes);
        }
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        let header = RawHeader {
            dims: self.dims.as_array(),
            dtype: T::DTYPE.to_string(),
            spacing: self.spacing,
        };
        let side = sidecar_path(path);
        let text = serde_json::to_string(&header).map_err(|e| Error::json(&side, e))?;
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    fn read_payload(path: &Path) -> Result<(RawHeader, Vec<T>)> {
        let header = read_header(path)?;
        let format_err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        if header.dtype != T::DTYPE {
            return Err(format_err(format!(
                "dtype {:?} in sidecar, expected {:?}",
                header.dtype,
                T::DTYPE
            )));
        }
        let dims = Dims::from(header.dims);
        if dims.is_empty() {
            return Err(format_err(format!("non-positive dims {dims}")));
        }
        if header.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(format_err(format!("invalid spacing {:?}", header.spacing)));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let expected = dims.len() * T::SIZE;
        if bytes.len() != expected {
            return Err(format_err(format!(
                "payload is {} bytes, expected {expected} for {dims} {}",
                bytes.len(),
                T::DTYPE
            )));
        }
        let data = bytes.chunks_exact(T::SIZE).map(T::read_le).collect();
        Ok((header, data))
    }
}

impl Volume3 {
    pub fn read_raw(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, data) = Self::read_payload(path)?;
        let vol = Self::from_vec(Dims::from(header.dims), data).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(vol.with_spacing(header.spacing))
    }
}

impl Mask3 {
    pub fn read_raw(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, data) = Self::read_payload(path)?;
        let mask = Self::from_vec(Dims::from(header.dims), data).map_err(|e| match e {
            Error::Domain(d) => Error::Domain(format!("{}: {d}", path.display())),
            other => other,
        })?;
        Ok(mask.with_spacing(header.spacing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: Dims, data: &[f32]) -> Volume3 {
        Volume3::from_vec(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn product_with_identity_and_zero_masks() {
        let d = Dims::new(4, 1, 1);
        let v = vol(d, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(v.elementwise_product(&Mask3::ones(d)).unwrap(), v);
        assert!(v
            .elementwise_product(&Mask3::zeros(d))
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        let m = Mask3::from_vec(d, vec![1, 0, 1, 0]).unwrap();
        assert_eq!(v.elementwise_product(&m).unwrap().data(), &[1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn product_rejects_mismatched_dims() {
        let v = Volume3::zeros(Dims::new(2, 2, 1));
        let m = Mask3::zeros(Dims::new(2, 1, 2));
        assert!(matches!(v.elementwise_product(&m), Err(Error::Shape { .. })));
    }

    #[test]
    fn raw_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vol");
        let v = vol(Dims::new(3, 2, 1), &[0.5, -1.25, 3.0, 1e-30, -0.0, 7.0])
            .with_spacing([0.5, 0.75, 1.25]);
        v.write_raw(&p).unwrap();
        let back = Volume3::read_raw(&p).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing(), v.spacing());
        let bits = |g: &Volume3| g.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&v));
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vol");
        vol(Dims::new(3, 2, 1), &[1.0; 6]).write_raw(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        let err = Volume3::read_raw(&p).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn mask_value_two_is_a_domain_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.vol");
        Mask3::ones(Dims::new(2, 2, 1)).write_raw(&p).unwrap();
        std::fs::write(&p, [1u8, 0, 2, 1]).unwrap();
        assert!(matches!(Mask3::read_raw(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vol");
        vol(Dims::new(2, 1, 1), &[1.0, 2.0]).write_raw(&p).unwrap();
        let mut bytes = 1.0f32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(Volume3::read_raw(&p).is_err());
    }

    #[test]
    fn missing_or_mismatched_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vol");
        std::fs::write(&p, [0u8; 4]).unwrap();
        assert!(matches!(Volume3::read_raw(&p), Err(Error::Io { .. })));
        Mask3::ones(Dims::new(2, 2, 1)).write_raw(&p).unwrap();
        assert!(matches!(Volume3::read_raw(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn flip_x_reverses_rows() {
        let v = vol(Dims::new(2, 1, 1), &[1.0, 2.0]);
        assert_eq!(v.flip(Axis::X).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn flip_y_matches_reindex_oracle() {
        let d = Dims::new(2, 2, 1);
        let m = Mask3::from_vec(d, vec![1, 0, 0, 1]).unwrap();
        let f = m.flip(Axis::Y).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(f.get(x, y, 0), m.get(x, 1 - y, 0));
            }
        }
    }

    #[test]
    fn flip_z_is_rejected() {
        assert!(Mask3::zeros(Dims::cube(2)).flip(Axis::Z).is_err());
    }

    #[test]
    fn reflect_pad_then_crop_restores() {
        let d = Dims::new(3, 2, 2);
        let v = vol(d, &(0..12).map(|i| i as f32).collect::<Vec<_>>());
        let p = v.reflect_pad(Dims::new(5, 4, 2));
        assert_eq!(p.dims(), Dims::new(5, 4, 2));
        // mirror without repeating the edge: x = 3 reads x = 1
        assert_eq!(p.get(3, 0, 0), v.get(1, 0, 0));
        assert_eq!(p.crop([0, 0, 0], d).unwrap(), v);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mask_strategy() -> impl Strategy<Value = Mask3> {
            (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(nx, ny, nz)| {
                proptest::collection::vec(0u8..2, nx * ny * nz)
                    .prop_map(move |data| Mask3::from_vec(Dims::new(nx, ny, nz), data).unwrap())
            })
        }

        proptest! {
            #[test]
            fn flip_is_an_involution_preserving_population(m in mask_strategy()) {
                for axis in [Axis::X, Axis::Y] {
                    let f = m.flip(axis).unwrap();
                    prop_assert_eq!(f.count(), m.count());
                    prop_assert_eq!(f.flip(axis).unwrap(), m.clone());
                }
            }

            #[test]
            fn raw_round_trip(m in mask_strategy()) {
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("m.vol");
                m.write_raw(&p).unwrap();
                prop_assert_eq!(Mask3::read_raw(&p).unwrap(), m);
            }
        }
    }
}
