use crate::error::{Error, Result};
use crate::image::Image;

/// Dense `(batch, channels, height, width)` array of `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::dims(
                format!("{n} values for {dims:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }

    /// One image as a batch of one.
    pub fn from_image(img: &Image) -> Self {
        Self {
            dims: [1, img.channels(), img.height(), img.width()],
            data: img.data().to_vec(),
        }
    }

    /// Stacks same-shaped images along the batch axis.
    pub fn from_images(imgs: &[&Image]) -> Result<Self> {
        let first = imgs
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty image batch".into()))?;
        let mut data = Vec::with_capacity(first.data().len() * imgs.len());
        for img in imgs {
            first.check_same_shape(img)?;
            data.extend_from_slice(img.data());
        }
        Ok(Self {
            dims: [imgs.len(), first.channels(), first.height(), first.width()],
            data,
        })
    }

    /// Batch entry `n` as an image. Fails for channel counts an [`Image`]
    /// cannot hold or non-finite values.
    pub fn to_image(&self, n: usize) -> Result<Image> {
        let [_, c, h, w] = self.dims;
        Image::from_vec(w, h, c, self.item(n).to_vec())
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// All channels of batch entry `n`.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.dims[1] * self.plane_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.dims[1] * self.plane_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_dims(&self, dims: [usize; 4], what: &str) -> Result<()> {
        if self.dims == dims {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{what} {dims:?}"),
                format!("{:?}", self.dims),
            ))
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        other.check_dims(self.dims, "addend")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to concatenate".into()))?;
        let [n, _, h, w] = first.dims;
        for p in parts {
            if p.dims[0] != n || p.dims[2] != h || p.dims[3] != w {
                return Err(Error::dims(
                    format!("batch {n} of {w}x{h} maps"),
                    format!("{:?}", p.dims),
                ));
            }
        }
        let c: usize = parts.iter().map(|p| p.dims[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(b));
            }
        }
        Ok(Tensor4 {
            dims: [n, c, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor4::concat_channels`]: splits into consecutive
    /// channel groups of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor4>> {
        let [n, c, h, w] = self.dims;
        if sizes.iter().sum::<usize>() != c {
            return Err(Error::dims(
                format!("{c} channels"),
                format!("groups {sizes:?}"),
            ));
        }
        let p = h * w;
        let mut out: Vec<Tensor4> = sizes.iter().map(|&s| Tensor4::zeros([n, s, h, w])).collect();
        for b in 0..n {
            let src = self.item(b);
            let mut off = 0;
            for (t, &s) in out.iter_mut().zip(sizes) {
                t.item_mut(b).copy_from_slice(&src[off * p..(off + s) * p]);
                off += s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_roundtrips() {
        let a = Tensor4::from_vec([2, 1, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let b = Tensor4::from_vec([2, 2, 2, 2], (0..16).map(|v| 100.0 + v as f32).collect()).unwrap();
        let cat = Tensor4::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.dims(), [2, 3, 2, 2]);
        assert_eq!(cat.plane(1, 0), a.plane(1, 0));
        assert_eq!(cat.plane(1, 2), b.plane(1, 1));
        let parts = cat.split_channels(&[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn shape_errors() {
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let a = Tensor4::zeros([1, 1, 2, 2]);
        let b = Tensor4::zeros([1, 1, 3, 2]);
        assert!(Tensor4::concat_channels(&[&a, &b]).is_err());
        assert!(a.split_channels(&[2]).is_err());
    }

    #[test]
    fn image_roundtrip() {
        let img = Image::from_fn(3, 2, 3, |x, y, c| (x + 2 * y + 5 * c) as f32 / 20.0).unwrap();
        let t = Tensor4::from_image(&img);
        assert_eq!(t.dims(), [1, 3, 2, 3]);
        assert_eq!(t.to_image(0).unwrap(), img);
    }
}
