//! Named parameter blocks and their flat-vector view.
//!
//! Blocks flatten in declaration order, each block column-major.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};

use crate::error::{Error, Result};
use crate::scalar::Float;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl BlockInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Flat index of entry `(r, c)`.
    #[inline]
    pub fn index(&self, r: usize, c: usize) -> usize {
        self.offset + r + c * self.rows
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    blocks: Vec<BlockInfo>,
    dim: usize,
}

impl BlockLayout {
    pub fn new<S: Into<String>>(shapes: impl IntoIterator<Item = (S, usize, usize)>) -> Result<Self> {
        let mut blocks: Vec<BlockInfo> = Vec::new();
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            let name = name.into();
            if blocks.iter().any(|b| b.name == name) {
                return Err(Error::Config(format!("duplicate block name {name:?}")));
            }
            if rows == 0 || cols == 0 {
                return Err(Error::Config(format!("block {name:?} has an empty shape")));
            }
            blocks.push(BlockInfo { name, rows, cols, offset });
            offset += rows * cols;
        }
        Ok(Self { blocks, dim: offset })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn get(&self, name: &str) -> Result<&BlockInfo> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.name.as_str())
    }
}

/// The trainable state: an ordered list of named matrices with fixed shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlocks<T: Float> {
    layout: BlockLayout,
    mats: Vec<DMatrix<T>>,
}

impl<T: Float> ParamBlocks<T> {
    pub fn new<S: Into<String>>(blocks: impl IntoIterator<Item = (S, DMatrix<T>)>) -> Result<Self> {
        let (names, mats): (Vec<String>, Vec<DMatrix<T>>) =
            blocks.into_iter().map(|(n, m)| (n.into(), m)).unzip();
        let layout = BlockLayout::new(
            names
                .iter()
                .zip(&mats)
                .map(|(n, m)| (n.clone(), m.nrows(), m.ncols())),
        )?;
        let out = Self { layout, mats };
        out.check_finite()?;
        Ok(out)
    }

    pub fn zeros(layout: &BlockLayout) -> Self {
        let mats = layout
            .blocks()
            .iter()
            .map(|b| DMatrix::zeros(b.rows, b.cols))
            .collect();
        Self { layout: layout.clone(), mats }
    }

    pub fn from_flat(layout: &BlockLayout, flat: &[T]) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(Error::Dimension { expected: layout.dim(), found: flat.len() });
        }
        let mats = layout
            .blocks()
            .iter()
            .map(|b| DMatrix::from_column_slice(b.rows, b.cols, &flat[b.range()]))
            .collect();
        let out = Self { layout: layout.clone(), mats };
        out.check_finite()?;
        Ok(out)
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn flatten(&self) -> DVector<T> {
        let mut out = DVector::zeros(self.dim());
        for (b, m) in self.layout.blocks().iter().zip(&self.mats) {
            out.as_mut_slice()[b.range()].copy_from_slice(m.as_slice());
        }
        out
    }

    pub fn block(&self, i: usize) -> &DMatrix<T> {
        &self.mats[i]
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<T>> {
        Ok(&self.mats[self.layout.position(name)?])
    }

    pub fn view(&self, name: &str) -> Result<DMatrixView<'_, T>> {
        Ok(self.get(name)?.as_view())
    }

    /// Mutable access that cannot change the block's shape.
    pub fn block_mut(&mut self, i: usize) -> DMatrixViewMut<'_, T> {
        self.mats[i].as_view_mut()
    }

    pub fn get_mut(&mut self, name: &str) -> Result<DMatrixViewMut<'_, T>> {
        let i = self.layout.position(name)?;
        Ok(self.block_mut(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DMatrix<T>)> {
        self.layout.names().zip(&self.mats)
    }

    pub fn matrices(&self) -> &[DMatrix<T>] {
        &self.mats
    }

    /// Builds params with this layout from matrices of matching shapes.
    pub fn with_matrices(&self, mats: Vec<DMatrix<T>>) -> Result<Self> {
        if mats.len() != self.mats.len() {
            return Err(Error::Dimension { expected: self.mats.len(), found: mats.len() });
        }
        for (b, m) in self.layout.blocks().iter().zip(&mats) {
            if m.shape() != (b.rows, b.cols) {
                return Err(Error::Shape {
                    what: b.name.clone(),
                    expected: (b.rows, b.cols),
                    found: m.shape(),
                });
            }
        }
        let out = Self { layout: self.layout.clone(), mats };
        out.check_finite()?;
        Ok(out)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.mats
            .iter()
            .zip(&other.mats)
            .fold(T::zero(), |acc, (a, b)| acc + a.dot(b))
    }

    pub fn norm_sq(&self) -> T {
        self.mats
            .iter()
            .fold(T::zero(), |acc, m| acc + m.norm_squared())
    }

    pub fn block_norms(&self) -> Vec<T> {
        self.mats.iter().map(|m| m.norm()).collect()
    }

    /// `self += alpha * other`; layouts must agree.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            *a += b * alpha;
        }
    }

    pub fn scale_mut(&mut self, alpha: T) {
        for m in &mut self.mats {
            *m *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mats
            .iter()
            .all(|m| m.iter().all(|x| na_is_finite(*x)))
    }

    fn check_finite(&self) -> Result<()> {
        for (name, m) in self.iter() {
            if !m.iter().all(|x| na_is_finite(*x)) {
                return Err(Error::NonFinite(format!("block {name}")));
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn na_is_finite<T: Float>(x: T) -> bool {
    nalgebra::ComplexField::is_finite(&x)
}
