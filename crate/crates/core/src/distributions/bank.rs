use std::io::{Read, Write};

use crate::rng::{ids, Stream};
use crate::tensor::Tensor;

use super::DistributionError;

/// A finite set of vectors standing in for a distribution known only
/// through samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBank {
    samples: Tensor,
    seed: u64,
}

impl SampleBank {
    /// `samples` is `[count, dim]` with `count ≥ 1`.
    pub fn new(samples: Tensor, seed: u64) -> Result<Self, DistributionError> {
        if samples.rank() != 2 || samples.rows() == 0 {
            return Err(DistributionError::EmptyBank);
        }
        Ok(Self { samples, seed })
    }

    pub fn count(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    /// A stream over this bank's seed for minibatch draws.
    pub fn stream(&self) -> Stream {
        Stream::new(self.seed, ids::DATA)
    }

    /// `size` rows drawn uniformly with replacement.
    pub fn draw_minibatch(&self, size: usize, stream: &mut Stream) -> Tensor {
        let idx: Vec<usize> = (0..size).map(|_| stream.index(self.count())).collect();
        self.samples.gather_rows(&idx)
    }

    /// Splits rows into two banks by a seeded permutation; the first receives
    /// `first` rows.
    pub fn split(&self, first: usize, stream: &mut Stream) -> Result<(Self, Self, Vec<usize>), DistributionError> {
        let perm = stream.permutation(self.count());
        let a = Self::new(self.samples.gather_rows(&perm[..first]), self.seed)?;
        let b = Self::new(self.samples.gather_rows(&perm[first..]), self.seed)?;
        Ok((a, b, perm))
    }

    /// Headerless CSV, one vector per row.
    pub fn read_csv<R: Read>(reader: R, seed: u64) -> Result<Self, DistributionError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut data = Vec::new();
        let mut dim = None;
        let mut rows = 0;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if *dim.get_or_insert(rec.len()) != rec.len() {
                return Err(DistributionError::Parse {
                    row,
                    detail: format!("expected {} fields, found {}", dim.unwrap_or(0), rec.len()),
                });
            }
            for field in rec.iter() {
                let v: f64 = field.parse().map_err(|e| DistributionError::Parse {
                    row,
                    detail: format!("{field:?}: {e}"),
                })?;
                data.push(v);
            }
            rows += 1;
        }
        let dim = dim.ok_or(DistributionError::EmptyBank)?;
        Self::new(Tensor::matrix(rows, dim, data)?, seed)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DistributionError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.count() {
            w.write_record(self.samples.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` standard-normal vectors of width `dim`.
pub fn standard_normal_bank(n: usize, dim: usize, seed: u64) -> Result<SampleBank, DistributionError> {
    let mut stream = Stream::new(seed, ids::PRIOR_BANK);
    SampleBank::new(stream.normal_tensor(n, dim), seed)
}
