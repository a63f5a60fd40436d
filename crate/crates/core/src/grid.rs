//! Cell-centered tensor grids: the discrete stand-in for L₂(D).
//!
//! A [`GridFunction`] stores one value per cell of a uniform grid over the
//! domain's bounding box, plus a mask marking the cells whose centers lie in
//! D. Masked-out cells always carry the value zero (the absorbing/Dirichlet
//! convention), and all arithmetic demands identical grid metadata.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};

/// Geometry of a uniform cell-centered grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec<F: Scalar> {
    origin: Vec<F>,
    spacing: Vec<F>,
    cells: Vec<usize>,
}

impl<F: Scalar> GridSpec<F> {
    pub fn new(origin: Vec<F>, spacing: Vec<F>, cells: Vec<usize>) -> Self {
        assert_eq!(origin.len(), spacing.len());
        assert_eq!(origin.len(), cells.len());
        assert!(cells.iter().all(|&c| c > 0));
        Self {
            origin,
            spacing,
            cells,
        }
    }

    /// Grid over the domain's bounding box with `per_axis` cells per axis.
    pub fn from_domain(domain: &Domain<F>, per_axis: usize) -> Self {
        let (lo, hi) = domain.bounding_box();
        let spacing: Vec<F> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| (b - a) / F::from_usize(per_axis).unwrap())
            .collect();
        Self::new(lo.to_vec(), spacing, vec![per_axis; domain.dim()])
    }

    /// Grid over the bounding box with target spacing `h` on every axis.
    pub fn from_domain_spacing(domain: &Domain<F>, h: F) -> Self {
        let (lo, hi) = domain.bounding_box();
        let cells: Vec<usize> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| ((b - a) / h).round().to_usize().unwrap().max(1))
            .collect();
        let spacing: Vec<F> = lo
            .iter()
            .zip(hi)
            .zip(&cells)
            .map(|((&a, &b), &n)| (b - a) / F::from_usize(n).unwrap())
            .collect();
        Self::new(lo.to_vec(), spacing, cells)
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self) -> &[F] {
        &self.spacing
    }

    pub fn origin(&self) -> &[F] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> F {
        self.spacing.iter().fold(F::one(), |a, &h| a * h)
    }

    /// Row-major linear index of a multi-index.
    #[inline]
    pub fn linear(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for d in 0..self.dim() {
            lin = lin * self.cells[d] + idx[d];
        }
        lin
    }

    /// Multi-index of a linear index.
    pub fn multi(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = lin % self.cells[d];
            lin /= self.cells[d];
        }
        idx
    }

    /// Center of the cell with the given multi-index.
    pub fn center(&self, idx: &[usize]) -> Vec<F> {
        (0..self.dim())
            .map(|d| {
                self.origin[d]
                    + self.spacing[d] * (F::from_usize(idx[d]).unwrap() + F::lit(0.5))
            })
            .collect()
    }

    pub fn center_of_linear(&self, lin: usize) -> Vec<F> {
        self.center(&self.multi(lin))
    }

    /// Cell containing the point, or None if outside the grid.
    pub fn locate(&self, x: &[F]) -> Option<usize> {
        let mut idx = vec![0usize; self.dim()];
        for d in 0..self.dim() {
            let u = (x[d] - self.origin[d]) / self.spacing[d];
            if u < F::zero() {
                return None;
            }
            let i = u.floor().to_usize()?;
            if i >= self.cells[d] {
                return None;
            }
            idx[d] = i;
        }
        Some(self.linear(&idx))
    }

    fn ensure_matches(&self, other: &Self) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "incompatible grids: {:?} vs {:?}",
                self.cells, other.cells
            )));
        }
        Ok(())
    }
}

/// Mask of cells whose centers lie in D, shared between grid functions.
pub type Mask = Arc<Vec<bool>>;

/// Build the cell-center mask for a domain.
pub fn domain_mask<F: Scalar>(spec: &GridSpec<F>, domain: &Domain<F>) -> Mask {
    let mask: Vec<bool> = (0..spec.len())
        .map(|lin| domain.contains(&spec.center_of_linear(lin)))
        .collect();
    Arc::new(mask)
}

/// A discrete element of L₂(D): values on masked cells, zero elsewhere.
#[derive(Clone, Debug)]
pub struct GridFunction<F: Scalar> {
    spec: GridSpec<F>,
    mask: Mask,
    values: Vec<F>,
}

impl<F: Scalar> GridFunction<F> {
    pub fn zeros(spec: GridSpec<F>, mask: Mask) -> Self {
        assert_eq!(mask.len(), spec.len());
        let values = vec![F::zero(); spec.len()];
        Self { spec, mask, values }
    }

    /// Sample a function of the cell center on masked cells.
    pub fn sample(spec: GridSpec<F>, mask: Mask, f: impl Fn(&[F]) -> F) -> Self {
        let mut out = Self::zeros(spec, mask);
        for lin in 0..out.spec.len() {
            if out.mask[lin] {
                out.values[lin] = f(&out.spec.center_of_linear(lin));
            }
        }
        out
    }

    /// Wrap raw values; masked-out entries are forced to zero.
    pub fn from_values(spec: GridSpec<F>, mask: Mask, mut values: Vec<F>) -> Self {
        assert_eq!(values.len(), spec.len());
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = F::zero();
            }
        }
        Self { spec, mask, values }
    }

    pub fn spec(&self) -> &GridSpec<F> {
        &self.spec
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn masked_cell_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Discrete L₂(D) norm: sqrt(sum of value² · cell volume).
    pub fn norm_l2(&self) -> F {
        let vol = self.spec.cell_volume();
        let sq: Vec<F> = self
            .values
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v * v)
            .collect();
        (pairwise_sum(&sq) * vol).sqrt()
    }

    /// Total mass: sum of value · cell volume.
    pub fn mass(&self) -> F {
        let vol = self.spec.cell_volume();
        let vals: Vec<F> = self
            .values
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        pairwise_sum(&vals) * vol
    }

    pub fn linf(&self) -> F {
        self.values
            .iter()
            .fold(F::zero(), |a, &v| a.max(v.abs()))
    }

    /// self <- self + c * other.
    pub fn axpy(&mut self, c: F, other: &Self) -> Result<()> {
        self.spec.ensure_matches(&other.spec)?;
        for (v, &w) in self.values.iter_mut().zip(&other.values) {
            *v += c * w;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: F) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Pointwise difference as a new grid function.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.spec.ensure_matches(&other.spec)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Self::from_values(
            self.spec.clone(),
            self.mask.clone(),
            values,
        ))
    }

    /// L₂ distance to another grid function on the same grid.
    pub fn distance_l2(&self, other: &Self) -> Result<F> {
        Ok(self.sub(other)?.norm_l2())
    }

    /// Write as CSV: x1,..,xn,value,mask per cell in row-major order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let dim = self.spec.dim();
        for d in 0..dim {
            write!(w, "x{},", d + 1)?;
        }
        writeln!(w, "value,mask")?;
        for lin in 0..self.spec.len() {
            let c = self.spec.center_of_linear(lin);
            for v in &c {
                write!(w, "{:?},", v.to_f64_lossy())?;
            }
            writeln!(
                w,
                "{:?},{}",
                self.values[lin].to_f64_lossy(),
                u8::from(self.mask[lin])
            )?;
        }
        Ok(())
    }

    /// Read back a CSV produced by [`Self::write_csv`] onto a known spec.
    pub fn read_csv(spec: GridSpec<F>, path: &Path) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut values = Vec::with_capacity(spec.len());
        let mut mask = Vec::with_capacity(spec.len());
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                continue;
            }
            let cols: Vec<&str> = line.trim().split(',').collect();
            if cols.len() != spec.dim() + 2 {
                return Err(Error::Data(format!("bad CSV row: {line}")));
            }
            let v: f64 = cols[spec.dim()]
                .parse()
                .map_err(|e| Error::Data(format!("bad value in CSV: {e}")))?;
            let m: u8 = cols[spec.dim() + 1]
                .parse()
                .map_err(|e| Error::Data(format!("bad mask in CSV: {e}")))?;
            values.push(F::lit(v));
            mask.push(m != 0);
        }
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "CSV holds {} cells, spec expects {}",
                values.len(),
                spec.len()
            )));
        }
        Ok(Self::from_values(spec, Arc::new(mask), values))
    }

    /// Compact binary dump. Header: magic `EXGF`, version u32, ndim u32,
    /// then per dim (cells u64, origin f64, spacing f64), then row-major
    /// values as f64, then the mask as bytes.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"EXGF")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.spec.dim() as u32).to_le_bytes())?;
        for d in 0..self.spec.dim() {
            w.write_all(&(self.spec.cells[d] as u64).to_le_bytes())?;
            w.write_all(&self.spec.origin[d].to_f64_lossy().to_le_bytes())?;
            w.write_all(&self.spec.spacing[d].to_f64_lossy().to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        for &m in self.mask.iter() {
            w.write_all(&[u8::from(m)])?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EXGF" {
            return Err(Error::Data("not a grid-function dump".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != 1 {
            return Err(Error::Data(format!("unsupported dump version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut cells = Vec::with_capacity(dim);
        let mut origin = Vec::with_capacity(dim);
        let mut spacing = Vec::with_capacity(dim);
        let mut u64buf = [0u8; 8];
        for _ in 0..dim {
            r.read_exact(&mut u64buf)?;
            cells.push(u64::from_le_bytes(u64buf) as usize);
            r.read_exact(&mut u64buf)?;
            origin.push(F::lit(f64::from_le_bytes(u64buf)));
            r.read_exact(&mut u64buf)?;
            spacing.push(F::lit(f64::from_le_bytes(u64buf)));
        }
        let spec = GridSpec::new(origin, spacing, cells);
        let mut values = Vec::with_capacity(spec.len());
        for _ in 0..spec.len() {
            r.read_exact(&mut u64buf)?;
            values.push(F::lit(f64::from_le_bytes(u64buf)));
        }
        let mut mask = vec![0u8; spec.len()];
        r.read_exact(&mut mask)?;
        let mask: Vec<bool> = mask.into_iter().map(|b| b != 0).collect();
        Ok(Self::from_values(spec, Arc::new(mask), values))
    }
}

/// Discrete L₂(D) inner product of two grid functions on the same grid.
pub fn inner_product<F: Scalar>(a: &GridFunction<F>, b: &GridFunction<F>) -> Result<F> {
    a.spec.ensure_matches(&b.spec)?;
    let vol = a.spec.cell_volume();
    let prods: Vec<F> = a
        .values
        .iter()
        .zip(&b.values)
        .zip(a.mask.iter())
        .filter(|(_, &m)| m)
        .map(|((&x, &y), _)| x * y)
        .collect();
    Ok(pairwise_sum(&prods) * vol)
}
