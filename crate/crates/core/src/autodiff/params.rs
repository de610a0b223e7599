use rand::Rng;

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named dense arrays with a gradient buffer of identical shape each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics if `name` is already registered.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-1/sqrt(rows), 1/sqrt(rows)]`, rows being the fan-in.
    pub fn add_uniform<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        self.add_uniform_fan_in(name, rows, cols, rows, rng)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, for row blocks of a
    /// larger projection.
    pub fn add_uniform_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    /// Bias row of `cols` entries drawn with the given fan-in.
    pub fn add_bias<R: Rng + ?Sized>(&mut self, name: impl Into<String>, fan_in: usize, cols: usize, rng: &mut R) -> ParamId {
        self.add_uniform_fan_in(name, 1, cols, fan_in, rng)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (dst, src) in self.grads.iter_mut().zip(&grads.0) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::all_finite)
    }

    /// Flat view of scalar `index` across all parameters in registration order.
    pub fn locate(&self, mut index: usize) -> Option<(ParamId, usize)> {
        for (i, v) in self.values.iter().enumerate() {
            if index < v.len() {
                return Some((ParamId(i), index));
            }
            index -= v.len();
        }
        None
    }
}

/// Gradients with the shapes of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub(crate) Vec<Matrix>);

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self(params.values.iter().map(|v| Matrix::zeros(v.rows(), v.cols())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.0[id.0]
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Matrix::all_finite)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            g.scale_assign(s);
        }
    }

    pub fn flat(&self, index: usize) -> f64 {
        let mut index = index;
        for g in &self.0 {
            if index < g.len() {
                return g.data()[index];
            }
            index -= g.len();
        }
        panic!("flat gradient index out of range")
    }
}
