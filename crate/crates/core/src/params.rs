//! Named parameter groups and their initialization.
//!
//! Each group is a struct of `Array2<f64>` tensors with a companion struct of
//! tape handles. `bind` registers every tensor as a trainable leaf; `freeze`
//! registers them as constants for inference.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Tape, Var};
use crate::data::SampleWindow;

macro_rules! param_group {
    ($(#[$meta:meta])* $name:ident / $vars:ident { $($(#[$fmeta:meta])* $field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $($(#[$fmeta])* pub $field: ndarray::Array2<f64>,)+
        }

        #[derive(Clone, Copy, Debug)]
        pub struct $vars {
            $(pub $field: $crate::autograd::Var,)+
        }

        impl $name {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn bind(&self, tape: &mut $crate::autograd::Tape) -> $vars {
                $vars { $($field: tape.leaf(self.$field.clone()),)+ }
            }

            pub fn freeze(&self, tape: &mut $crate::autograd::Tape) -> $vars {
                $vars { $($field: tape.constant(self.$field.clone()),)+ }
            }

            pub fn tensors(&self) -> Vec<(&'static str, &ndarray::Array2<f64>)> {
                vec![$((stringify!($field), &self.$field),)+]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut ndarray::Array2<f64>)> {
                vec![$((stringify!($field), &mut self.$field),)+]
            }

            /// Zero tensors with the same shapes.
            pub fn zeros_like(&self) -> Self {
                Self { $($field: ndarray::Array2::zeros(self.$field.dim()),)+ }
            }
        }

        impl $vars {
            pub fn all(&self) -> Vec<(&'static str, $crate::autograd::Var)> {
                vec![$((stringify!($field), self.$field),)+]
            }
        }
    };
}

pub(crate) use param_group;

/// Model shape: sensors `N`, per-sensor dimension `m`, window width `ω` and
/// embedding size `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_sensors: usize,
    pub dim: usize,
    pub width: usize,
    pub hidden: usize,
}

impl Dims {
    /// Flattened per-sensor history length `ω·m`.
    pub fn history_len(&self) -> usize {
        self.width * self.dim
    }
}

/// One window's data as tape constants.
#[derive(Clone, Copy, Debug)]
pub struct WindowVars {
    /// `N×m`
    pub target: Var,
    /// `N×(ω·m)`
    pub per_sensor: Var,
    /// `ω×(N·m)`
    pub per_step: Var,
    /// `(N·ω)×m`
    pub candidates: Var,
}

impl WindowVars {
    pub fn new(tape: &mut Tape, w: &SampleWindow) -> Self {
        Self {
            target: tape.constant(w.target.clone()),
            per_sensor: tape.constant(w.per_sensor()),
            per_step: tape.constant(w.per_step()),
            candidates: tape.constant(w.candidates()),
        }
    }
}

/// Seeded initializer: matrices uniform in ±1/√fan_in, biases zero,
/// embeddings standard normal scaled by 0.1.
pub struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-bound..bound))
    }

    pub fn bias(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::zeros((rows, cols))
    }

    pub fn embedding(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| {
            let z: f64 = StandardNormal.sample(self.rng);
            0.1 * z
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    param_group!(Toy / ToyVars { w, b });

    #[test]
    fn names_and_binding_follow_declaration_order() {
        let p = Toy {
            w: Array2::ones((2, 2)),
            b: Array2::zeros((1, 2)),
        };
        assert_eq!(Toy::NAMES, &["w", "b"]);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        assert_eq!(tape.value(v.w), &p.w);
        assert_eq!(v.all()[1].0, "b");
        assert_eq!(p.zeros_like().w, Array2::<f64>::zeros((2, 2)));
        let frozen = p.freeze(&mut tape);
        assert_eq!(tape.value(frozen.b), &p.b);
        assert_eq!(p.tensors()[0].1, &p.w);
        let mut q = p.clone();
        q.tensors_mut()[1].1.fill(3.0);
        assert_eq!(q.b, Array2::from_elem((1, 2), 3.0));
    }

    #[test]
    fn uniform_bounds_respect_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut rng);
        let m = init.matrix(50, 16);
        assert!(m.iter().all(|v| v.abs() < 0.25));
        assert!(init.bias(1, 4).iter().all(|v| *v == 0.0));
        let e = init.embedding(200, 10);
        let sd = (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "{sd}");
    }
}
