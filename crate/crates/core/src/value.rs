//! State points and state-value functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::blob::{Reader, Writer};
use crate::error::{KbbError, Result};
use crate::regress::FittedFunction;

const SYMMETRY_TOL: f64 = 1e-10;

/// A borrowed state: an index into a finite state space or a point in `R^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StateRef<'a> {
    Index(usize),
    Vector(&'a [f64]),
}

/// Owned counterpart of [`StateRef`].
#[derive(Clone, Debug, PartialEq)]
pub enum StatePoint {
    Index(usize),
    Vector(Vec<f64>),
}

impl StatePoint {
    pub fn as_ref(&self) -> StateRef<'_> {
        match self {
            StatePoint::Index(i) => StateRef::Index(*i),
            StatePoint::Vector(v) => StateRef::Vector(v),
        }
    }

    pub fn kind(&self) -> StateKind {
        self.as_ref().kind()
    }
}

impl StateRef<'_> {
    pub fn kind(&self) -> StateKind {
        match self {
            StateRef::Index(_) => StateKind::Index,
            StateRef::Vector(v) => StateKind::Vector(v.len()),
        }
    }

    pub fn to_owned(&self) -> StatePoint {
        match *self {
            StateRef::Index(i) => StatePoint::Index(i),
            StateRef::Vector(v) => StatePoint::Vector(v.to_vec()),
        }
    }
}

/// Kind and dimension of a state space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StateKind {
    Index,
    Vector(usize),
}

impl StateKind {
    /// Number of real coordinates used to store one state.
    pub fn width(&self) -> usize {
        match self {
            StateKind::Index => 1,
            StateKind::Vector(d) => *d,
        }
    }
}

/// Invertible change of coordinates applied before a quadratic form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordMap {
    /// `z(x) = (x1 - x2^2, x2, x3 - x1^2)` on `R^3`.
    SquareCascade,
}

impl CoordMap {
    pub fn forward(&self, x: &[f64]) -> [f64; 3] {
        match self {
            CoordMap::SquareCascade => [x[0] - x[1] * x[1], x[1], x[2] - x[0] * x[0]],
        }
    }

    pub fn inverse(&self, z: &[f64]) -> [f64; 3] {
        match self {
            CoordMap::SquareCascade => {
                let x1 = z[0] + z[1] * z[1];
                [x1, z[1], z[2] + x1 * x1]
            }
        }
    }

    pub fn dim(&self) -> usize {
        3
    }
}

/// `x -> z(x)^T P z(x) + offset`, with `z` the identity when no map is set.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticValue {
    p_mat: DMatrix<f64>,
    offset: f64,
    coord_map: Option<CoordMap>,
}

impl QuadraticValue {
    pub fn p_mat(&self) -> &DMatrix<f64> {
        &self.p_mat
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn coord_map(&self) -> Option<CoordMap> {
        self.coord_map
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.p_mat.nrows();
        assert_eq!(x.len(), d, "quadratic value evaluated at wrong dimension");
        let mapped;
        let z: &[f64] = match self.coord_map {
            Some(map) => {
                mapped = map.forward(x);
                &mapped
            }
            None => x,
        };
        let mut acc = 0.0;
        for i in 0..d {
            let row: f64 = z.iter().zip(self.p_mat.row(i).iter()).map(|(zj, pij)| pij * zj).sum();
            acc += z[i] * row;
        }
        acc + self.offset
    }
}

/// A function on the state space that can be evaluated pointwise.
#[derive(Clone, Debug)]
pub enum StateValueFn {
    /// One value per tabular state; indices past the end evaluate to 0.
    Table(DVector<f64>),
    /// `sum_j coeffs[j] * basis[j]`.
    BasisSum {
        basis: BasisSet,
        coeffs: Vec<f64>,
    },
    Quadratic(QuadraticValue),
}

impl StateValueFn {
    pub fn zero_table(n: usize) -> Self {
        StateValueFn::Table(DVector::zeros(n))
    }

    pub fn basis_sum(basis: BasisSet, coeffs: Vec<f64>) -> Result<Self> {
        if basis.len() != coeffs.len() {
            return Err(KbbError::DimensionMismatch {
                expected: basis.len(),
                found: coeffs.len(),
            });
        }
        Ok(StateValueFn::BasisSum { basis, coeffs })
    }

    pub fn quadratic(p_mat: DMatrix<f64>, offset: f64, coord_map: Option<CoordMap>) -> Result<Self> {
        if p_mat.nrows() != p_mat.ncols() {
            return Err(KbbError::InvalidArgument("quadratic form must be square".into()));
        }
        if (&p_mat - p_mat.transpose()).amax() > SYMMETRY_TOL {
            return Err(KbbError::InvalidArgument("quadratic form is not symmetric".into()));
        }
        if let Some(map) = coord_map {
            if map.dim() != p_mat.nrows() {
                return Err(KbbError::DimensionMismatch {
                    expected: map.dim(),
                    found: p_mat.nrows(),
                });
            }
        }
        Ok(StateValueFn::Quadratic(QuadraticValue {
            p_mat,
            offset,
            coord_map,
        }))
    }

    pub fn eval(&self, s: StateRef<'_>) -> f64 {
        match self {
            StateValueFn::Table(values) => match s {
                StateRef::Index(i) => values.get(i).copied().unwrap_or(0.0),
                StateRef::Vector(_) => 0.0,
            },
            StateValueFn::BasisSum { basis, coeffs } => {
                basis.funcs.iter().zip(coeffs).map(|(f, c)| c * f.eval(s)).sum()
            }
            StateValueFn::Quadratic(q) => match s {
                StateRef::Vector(x) => q.eval(x),
                StateRef::Index(i) => q.eval(&[i as f64]),
            },
        }
    }

    /// Values at states `0..n` of a tabular space.
    pub fn table_values(&self, n: usize) -> DVector<f64> {
        match self {
            StateValueFn::Table(v) if v.len() == n => v.clone(),
            _ => DVector::from_fn(n, |i, _| self.eval(StateRef::Index(i))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(b"KBBVAL01");
        self.encode(&mut w);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(b"KBBVAL01")?;
        let v = Self::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        match self {
            StateValueFn::Table(v) => {
                w.u8(0);
                w.f64s(v.as_slice());
            }
            StateValueFn::BasisSum { basis, coeffs } => {
                w.u8(1);
                w.u64(basis.len() as u64);
                for f in &basis.funcs {
                    match f.as_ref() {
                        BasisFn::Fitted(fit) => {
                            w.u8(0);
                            fit.encode(w);
                        }
                        BasisFn::Value(v) => {
                            w.u8(1);
                            v.encode(w);
                        }
                    }
                }
                w.f64s(coeffs);
            }
            StateValueFn::Quadratic(q) => {
                w.u8(2);
                w.u64(q.p_mat.nrows() as u64);
                for v in q.p_mat.iter() {
                    w.f64(*v);
                }
                w.f64(q.offset);
                w.u8(match q.coord_map {
                    None => 0,
                    Some(CoordMap::SquareCascade) => 1,
                });
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => Ok(StateValueFn::Table(DVector::from_vec(r.f64s()?))),
            1 => {
                let n = r.len()?;
                let mut basis = BasisSet::new();
                for _ in 0..n {
                    match r.u8()? {
                        0 => basis.push(BasisFn::Fitted(FittedFunction::decode(r)?)),
                        1 => basis.push(BasisFn::Value(StateValueFn::decode(r)?)),
                        t => return Err(KbbError::Format(format!("unknown basis tag {t}"))),
                    }
                }
                let coeffs = r.f64s()?;
                StateValueFn::basis_sum(basis, coeffs)
            }
            2 => {
                let d = r.len()?;
                let data: Vec<f64> = (0..d * d).map(|_| r.f64()).collect::<Result<_>>()?;
                let offset = r.f64()?;
                let map = match r.u8()? {
                    0 => None,
                    1 => Some(CoordMap::SquareCascade),
                    t => return Err(KbbError::Format(format!("unknown coordinate map {t}"))),
                };
                StateValueFn::quadratic(DMatrix::from_vec(d, d, data), offset, map)
            }
            t => Err(KbbError::Format(format!("unknown value tag {t}"))),
        }
    }
}

/// One element of a basis.
#[derive(Clone, Debug)]
pub enum BasisFn {
    Fitted(FittedFunction),
    Value(StateValueFn),
}

impl BasisFn {
    pub fn eval(&self, s: StateRef<'_>) -> f64 {
        match self {
            BasisFn::Fitted(f) => f.eval(s),
            BasisFn::Value(v) => v.eval(s),
        }
    }
}

/// Ordered list of basis functions. Cloning shares the functions.
#[derive(Clone, Debug, Default)]
pub struct BasisSet {
    funcs: Vec<Arc<BasisFn>>,
}

impl BasisSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Basis of plain tabular vectors.
    pub fn from_tables<I: IntoIterator<Item = DVector<f64>>>(vectors: I) -> Self {
        Self {
            funcs: vectors
                .into_iter()
                .map(|v| Arc::new(BasisFn::Value(StateValueFn::Table(v))))
                .collect(),
        }
    }

    pub fn push(&mut self, f: BasisFn) {
        self.funcs.push(Arc::new(f));
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn get(&self, j: usize) -> Option<&BasisFn> {
        self.funcs.get(j).map(|f| f.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = &BasisFn> {
        self.funcs.iter().map(|f| f.as_ref())
    }

    /// `Phi(s)`.
    pub fn eval_row(&self, s: StateRef<'_>) -> Vec<f64> {
        self.funcs.iter().map(|f| f.eval(s)).collect()
    }

    /// Basis evaluated on tabular states `0..n`, one column per function.
    pub fn table_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, self.len());
        for (j, f) in self.funcs.iter().enumerate() {
            for i in 0..n {
                m[(i, j)] = f.eval(StateRef::Index(i));
            }
        }
        m
    }
}
