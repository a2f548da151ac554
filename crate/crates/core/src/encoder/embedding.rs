use super::sample::Domain;
use crate::error::{Error, Result};
use crate::numcore::{normalized, Tensor};

/// A batch of encoder outputs with the ids of the samples that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub domain: Domain,
    pub ids: Vec<u64>,
    pub rows: Tensor,
}

impl EmbeddingMatrix {
    pub fn new(domain: Domain, ids: Vec<u64>, rows: Tensor) -> Result<Self> {
        let (n, _) = rows.rows_cols();
        if rows.shape().len() != 2 || n != ids.len() {
            return Err(Error::shape(
                "embedding_matrix",
                format!("{} ids for rows {:?}", ids.len(), rows.shape()),
            ));
        }
        Ok(Self { domain, ids, rows })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.rows_cols().1
    }

    /// Rows divided by their L2 norm (zero rows stay zero).
    pub fn normalized(&self) -> Tensor {
        let (n, d) = self.rows.rows_cols();
        let data = self.rows.rows().flat_map(normalized).collect();
        Tensor::matrix(n, d, data).expect("same shape")
    }
}
