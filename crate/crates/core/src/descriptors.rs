//! Differentiable graph statistics over soft adjacency matrices.
//!
//! Every function takes the soft adjacency as a tape variable so gradients
//! flow back into the decoder. Hard graphs go through the same code on a
//! scratch tape (see [`hard_descriptor_values`]).

use std::fmt;
use std::str::FromStr;

use autodiff::{Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Default degree-histogram membership slope.
pub const DEFAULT_SLOPE: f64 = 0.1;

/// Row sums below this are floored before inversion in [`transition_matrix`].
pub const DEGREE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DescriptorSpec {
    DegreeHistogram { n_bins: usize, slope: f64 },
    Transition { steps: usize },
    TriangleCount,
}

impl DescriptorSpec {
    /// Stable name used in logs, configs and checkpoints.
    pub fn name(&self) -> String {
        match self {
            Self::DegreeHistogram { .. } => "degree_histogram".into(),
            Self::Transition { steps } => format!("transition_{steps}"),
            Self::TriangleCount => "triangle_count".into(),
        }
    }

    /// Output length for a graph with `n` real nodes.
    pub fn dimension(&self, n: usize) -> usize {
        match self {
            Self::DegreeHistogram { n_bins, .. } => *n_bins,
            Self::Transition { .. } => n * n,
            Self::TriangleCount => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::DegreeHistogram { n_bins, slope }
                if n_bins == 0 || slope.is_nan() || slope <= 0.0 =>
            {
                Err(Error::InvalidArgument(format!(
                    "degree histogram needs n_bins >= 1 and slope > 0 (got {n_bins}, {slope})"
                )))
            }
            Self::Transition { steps: 0 } => {
                Err(Error::InvalidArgument("transition needs s >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DescriptorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    specs: Vec<DescriptorSpec>,
}

impl DescriptorSet {
    pub fn new(specs: Vec<DescriptorSpec>) -> Result<Self> {
        for s in &specs {
            s.validate()?;
        }
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|t| t.name() == s.name()) {
                return Err(Error::InvalidArgument(format!(
                    "descriptor {s} listed twice"
                )));
            }
        }
        Ok(Self { specs })
    }

    /// Degree histogram with `n_max + 1` bins, transitions for `s = 1..=5`,
    /// and the triangle count.
    pub fn default_for(n_max: usize) -> Self {
        Self::parse("default", n_max, DEFAULT_SLOPE).expect("default set is valid")
    }

    /// Parse a comma-separated list of descriptor names. Accepts
    /// `degree_histogram`, `transition_<s>`, `transition_<a>-<b>`,
    /// `triangle_count`, `default` and `none`.
    pub fn parse(list: &str, n_max: usize, slope: f64) -> Result<Self> {
        let mut specs = Vec::new();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "none" => {}
                "default" => {
                    specs.push(DescriptorSpec::DegreeHistogram {
                        n_bins: n_max + 1,
                        slope,
                    });
                    specs.extend((1..=5).map(|steps| DescriptorSpec::Transition { steps }));
                    specs.push(DescriptorSpec::TriangleCount);
                }
                "degree_histogram" => specs.push(DescriptorSpec::DegreeHistogram {
                    n_bins: n_max + 1,
                    slope,
                }),
                "triangle_count" => specs.push(DescriptorSpec::TriangleCount),
                other => {
                    let bad = || Error::Config(format!("unknown descriptor {other:?}"));
                    let range = other.strip_prefix("transition_").ok_or_else(bad)?;
                    let (a, b) = range.split_once('-').unwrap_or((range, range));
                    let a = usize::from_str(a).map_err(|_| bad())?;
                    let b = usize::from_str(b).map_err(|_| bad())?;
                    specs.extend((a..=b).map(|steps| DescriptorSpec::Transition { steps }));
                }
            }
        }
        Self::new(specs)
    }

    pub fn specs(&self) -> &[DescriptorSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(DescriptorSpec::name).collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// A descriptor applied to one soft adjacency.
#[derive(Debug, Clone, Copy)]
pub struct DescriptorValue<'t> {
    pub spec: DescriptorSpec,
    pub value: Var<'t>,
}

impl DescriptorValue<'_> {
    pub fn dimension(&self) -> usize {
        self.value.value().len()
    }
}

/// Row sums of `a`, as an `n x 1` column.
pub fn soft_degree<'t>(a: Var<'t>) -> Result<Var<'t>> {
    Ok(a.sum_axis(1)?)
}

/// Bin `b` (centered at `b = 0..n_bins`) collects
/// `sum_i max(0, 1 - slope * |d_i - b|)` over soft degrees `d_i`.
/// Returns a `1 x n_bins` row.
pub fn soft_degree_histogram<'t>(a: Var<'t>, n_bins: usize, slope: f64) -> Result<Var<'t>> {
    DescriptorSpec::DegreeHistogram { n_bins, slope }.validate()?;
    let n = a.value().rows();
    let deg = soft_degree(a)?.broadcast(n, n_bins)?;
    let centers: Vec<f64> = (0..n).flat_map(|_| (0..n_bins).map(|b| b as f64)).collect();
    let centers = a.tape().constant(Tensor::matrix(n, n_bins, centers)?);
    let member = deg
        .sub(centers)?
        .abs()
        .scale(-slope)
        .add_scalar(1.0)
        .max_const(0.0);
    Ok(member.sum_axis(0)?)
}

/// One-step random-walk matrix `D^-1 A`, with degrees floored at
/// [`DEGREE_FLOOR`].
pub fn row_normalize<'t>(a: Var<'t>) -> Result<Var<'t>> {
    let n = a.value().rows();
    let inv = soft_degree(a)?.max_const(DEGREE_FLOOR).reciprocal();
    Ok(a.mul(inv.broadcast(n, n)?)?)
}

/// `(D^-1 A)^s`.
pub fn transition_matrix<'t>(a: Var<'t>, s: usize) -> Result<Var<'t>> {
    DescriptorSpec::Transition { steps: s }.validate()?;
    Ok(row_normalize(a)?.matrix_power(s)?)
}

/// `trace(A^3)`; six times the triangle count on a hard graph.
pub fn triangle_count<'t>(a: Var<'t>) -> Result<Var<'t>> {
    Ok(a.matrix_power(3)?.diag()?.sum())
}

/// Evaluate every descriptor of `set` on `a`. Transition powers share one
/// chain of products.
pub fn descriptor_eval<'t>(set: &DescriptorSet, a: Var<'t>) -> Result<Vec<DescriptorValue<'t>>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty descriptor set".into()));
    }
    let mut walk: Option<Var<'t>> = None;
    let mut powers: Vec<Var<'t>> = Vec::new();
    let mut out = Vec::with_capacity(set.len());
    for &spec in set.specs() {
        let value = match spec {
            DescriptorSpec::DegreeHistogram { n_bins, slope } => {
                soft_degree_histogram(a, n_bins, slope)?
            }
            DescriptorSpec::TriangleCount => triangle_count(a)?,
            DescriptorSpec::Transition { steps } => {
                let p = match walk {
                    Some(p) => p,
                    None => *walk.insert(row_normalize(a)?),
                };
                if powers.is_empty() {
                    powers.push(p);
                }
                while powers.len() < steps {
                    let next = powers[powers.len() - 1].matmul(p)?;
                    powers.push(next);
                }
                powers[steps - 1]
            }
        };
        out.push(DescriptorValue { spec, value });
    }
    Ok(out)
}

/// Descriptor values of a fixed (typically hard) adjacency, as flat rows.
pub fn hard_descriptor_values(set: &DescriptorSet, adjacency: &Tensor) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let a = tape.constant(adjacency.clone());
    Ok(descriptor_eval(set, a)?
        .into_iter()
        .map(|d| {
            let v = d.value.value();
            Tensor::row(v.data().to_vec())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn path3() -> Tensor {
        Tensor::from_rows(&[vec![0., 1., 0.], vec![1., 0., 1.], vec![0., 1., 0.]]).unwrap()
    }

    fn complete(n: usize) -> Tensor {
        let mut t = Tensor::ones(&[n, n]);
        for i in 0..n {
            t.set(i, i, 0.0);
        }
        t
    }

    #[test]
    fn degrees_and_histogram_of_path() {
        let tape = Tape::new();
        let a = tape.constant(path3());
        assert_eq!(soft_degree(a).unwrap().value().data(), &[1.0, 2.0, 1.0]);
        let h = soft_degree_histogram(a, 4, 0.1).unwrap();
        assert!(close(h.value().data(), &[2.6, 2.9, 2.8, 2.5], 1e-12));
        assert!(soft_degree_histogram(a, 4, 0.0).is_err());
    }

    #[test]
    fn half_matrix_degrees() {
        let tape = Tape::new();
        let mut m = Tensor::full(&[3, 3], 0.5);
        for i in 0..3 {
            m.set(i, i, 0.0);
        }
        let d = soft_degree(tape.constant(m)).unwrap();
        assert_eq!(d.value().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn degree_sum_gradient_is_one() {
        let tape = Tape::new();
        let a = tape.leaf(path3());
        let loss = soft_degree(a).unwrap().sum();
        let g = tape.backward(loss).unwrap().get(a);
        assert!(g.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn transitions_of_path() {
        let tape = Tape::new();
        let a = tape.constant(path3());
        let p1 = transition_matrix(a, 1).unwrap();
        assert!(close(
            p1.value().data(),
            &[0., 1., 0., 0.5, 0., 0.5, 0., 1., 0.],
            1e-12
        ));
        let p2 = transition_matrix(a, 2).unwrap();
        assert!(close(
            p2.value().data(),
            &[0.5, 0., 0.5, 0., 1., 0., 0.5, 0., 0.5],
            1e-12
        ));
        assert!(transition_matrix(a, 0).is_err());
    }

    #[test]
    fn triangle_counts() {
        let tape = Tape::new();
        assert_eq!(
            triangle_count(tape.constant(complete(3))).unwrap().item(),
            6.0
        );
        assert_eq!(
            triangle_count(tape.constant(complete(4))).unwrap().item(),
            24.0
        );
        assert_eq!(triangle_count(tape.constant(path3())).unwrap().item(), 0.0);
    }

    #[test]
    fn default_set_shapes() {
        let set = DescriptorSet::default_for(5);
        let vals = hard_descriptor_values(&set, &path3()).unwrap();
        let dims: Vec<usize> = vals.iter().map(Tensor::len).collect();
        assert_eq!(dims, vec![6, 9, 9, 9, 9, 9, 1]);
        assert_eq!(
            set.names(),
            [
                "degree_histogram",
                "transition_1",
                "transition_2",
                "transition_3",
                "transition_4",
                "transition_5",
                "triangle_count"
            ]
        );
    }

    #[test]
    fn shared_powers_match_direct_powers() {
        let set = DescriptorSet::parse("transition_1-5", 3, DEFAULT_SLOPE).unwrap();
        let vals = hard_descriptor_values(&set, &path3()).unwrap();
        let tape = Tape::new();
        for (s, v) in (1..=5).zip(&vals) {
            let direct = transition_matrix(tape.constant(path3()), s).unwrap();
            assert!(close(v.data(), direct.value().data(), 1e-15));
        }
    }

    #[test]
    fn parse_lists() {
        assert_eq!(
            DescriptorSet::parse("triangle_count", 4, 0.1)
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            DescriptorSet::parse("degree_histogram", 4, 0.1)
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            DescriptorSet::parse("transition_2-6", 4, 0.1)
                .unwrap()
                .names()[4],
            "transition_6"
        );
        assert!(DescriptorSet::parse("none", 4, 0.1).unwrap().is_empty());
        assert!(DescriptorSet::parse("orbits", 4, 0.1).is_err());
        assert!(DescriptorSet::parse("triangle_count,triangle_count", 4, 0.1).is_err());
        assert!(DescriptorSet::parse("transition_0", 4, 0.1).is_err());
    }

    #[test]
    fn singleton_triangle_on_k3() {
        let set = DescriptorSet::parse("triangle_count", 3, 0.1).unwrap();
        assert_eq!(
            hard_descriptor_values(&set, &complete(3)).unwrap()[0].data(),
            &[6.0]
        );
    }
}
