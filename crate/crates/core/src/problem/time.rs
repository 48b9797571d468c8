use nalgebra::DMatrix;

/// A coefficient that is either constant or piecewise-constant on a uniform
/// grid of `[0, T]` (right-continuous: value `k` holds on `[kΔ, (k+1)Δ)`).
#[derive(Debug, Clone, PartialEq)]
pub enum TimeVarying<T> {
    Constant(T),
    Piecewise { spacing: f64, values: Vec<T> },
}

impl<T> TimeVarying<T> {
    pub fn at(&self, t: f64) -> &T {
        match self {
            TimeVarying::Constant(v) => v,
            TimeVarying::Piecewise { spacing, values } => {
                let k = (t / spacing + 1e-9).floor();
                let k = if k < 0.0 { 0 } else { k as usize };
                &values[k.min(values.len() - 1)]
            }
        }
    }

    pub fn first(&self) -> &T {
        match self {
            TimeVarying::Constant(v) => v,
            TimeVarying::Piecewise { values, .. } => &values[0],
        }
    }

    pub fn values(&self) -> Vec<&T> {
        match self {
            TimeVarying::Constant(v) => vec![v],
            TimeVarying::Piecewise { values, .. } => values.iter().collect(),
        }
    }

    /// Breakpoint times (empty for constants).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            TimeVarying::Constant(_) => Vec::new(),
            TimeVarying::Piecewise { spacing, values } => {
                (0..values.len()).map(|k| k as f64 * spacing).collect()
            }
        }
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> TimeVarying<U> {
        match self {
            TimeVarying::Constant(v) => TimeVarying::Constant(f(v)),
            TimeVarying::Piecewise { spacing, values } => TimeVarying::Piecewise {
                spacing: *spacing,
                values: values.iter().map(f).collect(),
            },
        }
    }

    pub fn try_map<U, E>(&self, f: impl Fn(&T) -> Result<U, E>) -> Result<TimeVarying<U>, E> {
        Ok(match self {
            TimeVarying::Constant(v) => TimeVarying::Constant(f(v)?),
            TimeVarying::Piecewise { spacing, values } => TimeVarying::Piecewise {
                spacing: *spacing,
                values: values.iter().map(f).collect::<Result<_, _>>()?,
            },
        })
    }
}

impl TimeVarying<DMatrix<f64>> {
    pub fn constant(m: DMatrix<f64>) -> Self {
        TimeVarying::Constant(m)
    }

    pub fn shape_ok(&self, rows: usize, cols: usize) -> bool {
        self.values()
            .iter()
            .all(|m| m.nrows() == rows && m.ncols() == cols)
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|m| crate::linalg::all_finite(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_is_right_continuous() {
        let tv = TimeVarying::Piecewise {
            spacing: 0.25,
            values: vec![0, 1, 2, 3],
        };
        assert_eq!(*tv.at(0.0), 0);
        assert_eq!(*tv.at(0.2499), 0);
        assert_eq!(*tv.at(0.25), 1);
        assert_eq!(*tv.at(0.75), 3);
        assert_eq!(*tv.at(1.0), 3);
        // floating-point noise just below a node still lands on it
        assert_eq!(*tv.at(0.25 - 1e-15), 1);
    }
}
