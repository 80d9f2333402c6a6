//! Exact inner-product retrieval, offline metrics and PCA export.

mod index;
mod metrics;
mod pca;
mod pipeline;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView1};

pub use index::{build_index, retrieve, retrieve_all, Aggregation, ExactIndex, RetrievalConfig, UserQueue};
pub use metrics::{edge_auc, outer_scenario_metrics, precision_recall_at_k, OuterScenarioMetrics, PrecisionRecall};
pub use pca::{pca_project, principal_components, symmetric_eigen, write_pca_csv, PcaPoint, Principal};
pub use pipeline::{
    build_user_queues, evaluate, source_exclusive_items, validation_truth, EvalInput, EvalReport,
};

use crate::{Error, Result};

/// Item embeddings as a dense matrix with an id index.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

impl EmbeddingTable {
    /// Fails on duplicate ids, a row-count mismatch or non-finite entries.
    pub fn new(ids: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if ids.len() != vectors.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                vectors.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate item id `{id}`")));
            }
        }
        if let Some(i) = vectors.rows().into_iter().position(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite embedding for `{}`", ids[i])));
        }
        Ok(Self { ids, index, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.row_of(id).map(|i| self.vectors.row(i))
    }

    /// Tab-separated `item_id` and values with 9 significant digits, after
    /// `#` comment lines holding `header`.
    pub fn write_tsv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        for line in header.lines() {
            writeln!(w, "# {line}")?;
        }
        for (id, row) in self.ids.iter().zip(self.vectors.rows()) {
            w.write_all(id.as_bytes())?;
            for x in row {
                write!(w, "\t{x:.8e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the format of [`write_tsv`](Self::write_tsv); `#` lines and
    /// blank lines are skipped.
    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut dim = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    field: "item_id",
                    message: "empty".into(),
                });
            }
            let before = values.len();
            for f in fields {
                values.push(f.parse::<f64>().map_err(|e| Error::Parse {
                    line: n + 1,
                    field: "value",
                    message: e.to_string(),
                })?);
            }
            let width = values.len() - before;
            match dim {
                None => dim = Some(width),
                Some(d) if d != width => {
                    return Err(Error::Parse {
                        line: n + 1,
                        field: "value",
                        message: format!("expected {d} values, found {width}"),
                    })
                }
                _ => {}
            }
            ids.push(id.to_owned());
        }
        let dim = dim.unwrap_or(crate::EMBED_DIM);
        let vectors = Array2::from_shape_vec((ids.len(), dim), values).expect("row widths checked");
        Self::new(ids, vectors)
    }
}
