use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Dense row-major array of finite `f64` values with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ValueGrid {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("ValueGrid::new", expected, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value grid entry {pos} is {}", data[pos])));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_array2(array: &Array2<f64>) -> Result<Self> {
        let (r, c) = array.dim();
        Self::new(vec![r, c], array.iter().copied().collect())
    }

    /// Converts a 2-D grid back into an ndarray matrix.
    pub fn to_array2(&self) -> Result<Array2<f64>> {
        match self.shape.as_slice() {
            [r, c] => Ok(Array2::from_shape_vec((*r, *c), self.data.clone()).expect("shape checked")),
            other => Err(Error::shape("ValueGrid::to_array2", "2-D", format!("{other:?}"))),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// View of a 2-D grid as a matrix.
    pub fn view2(&self) -> ArrayView2<'_, f64> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => panic!("view2 on grid of shape {:?}", self.shape),
        };
        ArrayView2::from_shape((r, c), &self.data).expect("shape invariant")
    }

    pub fn view1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }
}

/// Named parameter blocks with a fixed, insertion-ordered iteration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    grids: Vec<ValueGrid>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a block and returns its index. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, grid: ValueGrid) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.grids.push(grid);
        Ok(self.grids.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.grids.iter().map(ValueGrid::len).sum()
    }

    pub fn get(&self, index: usize) -> &ValueGrid {
        &self.grids[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut ValueGrid {
        &mut self.grids[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ValueGrid)> {
        self.names.iter().map(String::as_str).zip(self.grids.iter())
    }

    pub fn grids_mut(&mut self) -> impl Iterator<Item = &mut ValueGrid> {
        self.grids.iter_mut()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            grids: self
                .grids
                .iter()
                .map(|g| ValueGrid::zeros(g.shape().to_vec()))
                .collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.grids.iter_mut().for_each(|g| g.fill(value));
    }

    /// True when both sets have identical names and shapes.
    pub fn aligned_with(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .grids
                .iter()
                .zip(&other.grids)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Concatenation of all blocks in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.grids.iter().flat_map(|g| g.data().iter().copied()).collect()
    }

    /// Overwrites all blocks from a flat vector produced by [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::shape("ParamSet::assign_flat", self.numel(), flat.len()));
        }
        let mut offset = 0;
        for g in &mut self.grids {
            let n = g.len();
            g.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
