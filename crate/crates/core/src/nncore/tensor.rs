//! Dense NCHW tensors. The payload is either `QNum` (fixed-point pipeline) or
//! `f32` (real-valued pipeline); the choice is pipeline-wide.

/// A dense, row-major NCHW array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<P> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<P>,
}

impl<P: Copy> Tensor<P> {
    /// Builds a tensor, checking that the payload length matches the extents.
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<P>) -> Result<Tensor<P>, String> {
        if data.len() != n * c * h * w {
            return Err(format!(
                "payload length {} does not match extents {}x{}x{}x{}",
                data.len(),
                n,
                c,
                h,
                w
            ));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: P) -> Tensor<P> {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && y < self.h && x < self.w);
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> P {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn data(&self) -> &[P] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [P] {
        &mut self.data
    }

    /// Reinterprets the payload as `(n, c*h*w, 1, 1)`.
    pub fn flattened(&self) -> Tensor<P> {
        Tensor {
            n: self.n,
            c: self.c * self.h * self.w,
            h: 1,
            w: 1,
            data: self.data.clone(),
        }
    }

    pub fn map<Q: Copy>(&self, f: impl FnMut(P) -> Q) -> Tensor<Q> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_is_checked() {
        assert!(Tensor::new(1, 2, 3, 4, vec![0f32; 24]).is_ok());
        assert!(Tensor::new(1, 2, 3, 4, vec![0f32; 23]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::new(1, 2, 2, 2, (0..8).collect::<Vec<i32>>()).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 0);
        assert_eq!(t.at(0, 0, 1, 1), 3);
        assert_eq!(t.at(0, 1, 0, 0), 4);
        assert_eq!(t.at(0, 1, 1, 1), 7);
    }

    #[test]
    fn flatten_preserves_order() {
        let t = Tensor::new(2, 2, 1, 2, (0..8).collect::<Vec<i32>>()).unwrap();
        let f = t.flattened();
        assert_eq!(f.dims(), (2, 4, 1, 1));
        assert_eq!(f.data(), t.data());
    }
}
