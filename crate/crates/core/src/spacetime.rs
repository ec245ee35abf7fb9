//! Fine-mesh functions that are piecewise linear in time.

/// Nodal values at every fine time node `t_0 .. t_N` on the interior DOFs
/// of one mesh. The slice at `t_0` is the zero initial value.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeFunction {
    n_dofs: usize,
    n_steps: usize,
    values: Vec<f64>,
}

impl SpaceTimeFunction {
    pub fn zeros(n_steps: usize, n_dofs: usize) -> Self {
        Self { n_dofs, n_steps, values: vec![0.0; (n_steps + 1) * n_dofs] }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Values at fine time node `g`.
    pub fn at(&self, g: usize) -> &[f64] {
        &self.values[g * self.n_dofs..(g + 1) * self.n_dofs]
    }

    pub fn at_mut(&mut self, g: usize) -> &mut [f64] {
        &mut self.values[g * self.n_dofs..(g + 1) * self.n_dofs]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        assert_eq!((self.n_dofs, self.n_steps), (other.n_dofs, other.n_steps));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
