use std::ops::{Deref, DerefMut};

use crate::access::{level_bounds, AccessBuilder, LinearAccess};
use crate::build::BuildParams;
use crate::error::{Error, Result};
use crate::tree::init_tree_structure;
use crate::volume::Dims;

/// Values aligned with the particle order of one [`LinearAccess`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleValues(Vec<f32>);

impl ParticleValues {
    pub fn new(values: Vec<f32>) -> Self {
        ParticleValues(values)
    }

    pub fn zeros(n: usize) -> Self {
        ParticleValues(vec![0.0; n])
    }

    /// Wrap `values`, checking the length against `access`.
    pub fn for_access(access: &LinearAccess, values: Vec<f32>) -> Result<Self> {
        check_len(access, values.len())?;
        Ok(ParticleValues(values))
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for ParticleValues {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl DerefMut for ParticleValues {
    fn deref_mut(&mut self) -> &mut [f32] {
        &mut self.0
    }
}

impl From<Vec<f32>> for ParticleValues {
    fn from(v: Vec<f32>) -> Self {
        ParticleValues(v)
    }
}

pub(crate) fn check_len(access: &LinearAccess, len: usize) -> Result<()> {
    if len != access.num_particles() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} particle values", access.num_particles()),
            found: len.to_string(),
        });
    }
    Ok(())
}

/// An Adaptive Particle Representation: leaf particle cells plus the
/// interior nodes of the tree above them.
#[derive(Debug, Clone, PartialEq)]
pub struct Apr {
    access: LinearAccess,
    tree: LinearAccess,
    params: Option<BuildParams>,
}

impl Apr {
    /// Wrap a leaf access structure and derive its tree.
    pub fn new(access: LinearAccess) -> Self {
        let tree = init_tree_structure(&access);
        Apr { access, tree, params: None }
    }

    pub(crate) fn from_parts(access: LinearAccess, tree: LinearAccess, params: Option<BuildParams>) -> Self {
        Apr { access, tree, params }
    }

    pub fn with_params(mut self, params: BuildParams) -> Self {
        self.params = Some(params);
        self
    }

    /// Every pixel is its own particle.
    pub fn dense(dims: Dims) -> Self {
        let (l_min, l_max) = level_bounds(dims);
        let mut b = AccessBuilder::new(l_min, l_max, l_max, dims);
        for l in l_min..=l_max {
            let d = crate::access::grid_dims(dims, l_max, l);
            for _ in 0..d.z * d.x {
                if l == l_max {
                    b.push_row(0..dims.y as u16);
                } else {
                    b.push_row([]);
                }
            }
        }
        Apr::new(b.finish())
    }

    pub fn access(&self) -> &LinearAccess {
        &self.access
    }

    pub fn tree(&self) -> &LinearAccess {
        &self.tree
    }

    pub fn params(&self) -> Option<&BuildParams> {
        self.params.as_ref()
    }

    pub fn dims(&self) -> Dims {
        self.access.pixel_dims()
    }

    pub fn l_min(&self) -> usize {
        self.access.l_min()
    }

    pub fn l_max(&self) -> usize {
        self.access.l_max()
    }

    pub fn num_particles(&self) -> usize {
        self.access.num_particles()
    }

    pub fn num_tree_nodes(&self) -> usize {
        self.tree.num_particles()
    }

    /// Pixel count over particle count.
    pub fn computational_ratio(&self) -> f64 {
        computational_ratio(self)
    }

    /// `(level, particle count)` for each leaf level.
    pub fn particles_per_level(&self) -> Vec<(usize, usize)> {
        self.access.levels().map(|l| (l, self.access.level_range(l).len())).collect()
    }

    /// Validate leaves (arrays and partition) and tree arrays, and check that
    /// the tree is exactly the ancestor set of the leaves.
    pub fn validate(&self) -> Result<()> {
        self.access.validate()?;
        self.tree.validate_arrays()?;
        if init_tree_structure(&self.access) != self.tree {
            return Err(Error::integrity("tree does not match the ancestors of the leaves"));
        }
        Ok(())
    }
}

/// Pixel count over leaf particle count.
pub fn computational_ratio(apr: &Apr) -> f64 {
    let n = apr.num_particles();
    if n == 0 {
        return 0.0;
    }
    apr.dims().len() as f64 / n as f64
}
