use crate::compression::PcaModel;
use crate::error::{check_dim, invalid, Result};
use crate::vectorstore::{exact_knn_batch, Datastore, IvfIndex, IvfParams, NeighborSet, SearchBackend};

/// A datastore together with how it is queried: an optional PCA reduction
/// applied to decoder representations and an exact or IVF search backend.
#[derive(Debug, Clone)]
pub struct Retriever {
    ds: Datastore,
    pca: Option<PcaModel>,
    index: Option<IvfIndex>,
    nprobe: usize,
}

impl Retriever {
    pub fn exact(ds: Datastore) -> Self {
        Self {
            ds,
            pca: None,
            index: None,
            nprobe: 0,
        }
    }

    /// Builds an IVF index when the backend asks for one. The datastore
    /// must already live in the reduced space when `pca` is given.
    pub fn new(ds: Datastore, pca: Option<PcaModel>, backend: SearchBackend) -> Result<Self> {
        let index = match backend {
            SearchBackend::Exact => None,
            SearchBackend::Ivf { .. } => Some(IvfIndex::build_with(&ds, &IvfParams::for_size(ds.len()))?),
        };
        Self::with_index(ds, pca, index, backend)
    }

    pub fn with_index(
        ds: Datastore,
        pca: Option<PcaModel>,
        index: Option<IvfIndex>,
        backend: SearchBackend,
    ) -> Result<Self> {
        if let Some(p) = &pca {
            check_dim(p.output_dim(), ds.dim())?;
        }
        let nprobe = match (backend, &index) {
            (SearchBackend::Exact, _) => 0,
            (SearchBackend::Ivf { nprobe }, Some(idx)) => {
                if nprobe == 0 {
                    return Err(invalid("nprobe must be at least 1"));
                }
                check_dim(idx.dim(), ds.dim())?;
                if idx.len() != ds.len() {
                    return Err(invalid(format!(
                        "index covers {} entries but datastore has {}",
                        idx.len(),
                        ds.len()
                    )));
                }
                nprobe.min(idx.n_clusters())
            }
            (SearchBackend::Ivf { .. }, None) => return Err(invalid("IVF backend needs an index")),
        };
        Ok(Self {
            ds,
            pca,
            index: if nprobe == 0 { None } else { index },
            nprobe,
        })
    }

    pub fn datastore(&self) -> &Datastore {
        &self.ds
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }

    pub fn index(&self) -> Option<&IvfIndex> {
        self.index.as_ref()
    }

    pub fn backend(&self) -> SearchBackend {
        match self.index {
            Some(_) => SearchBackend::Ivf { nprobe: self.nprobe },
            None => SearchBackend::Exact,
        }
    }

    pub fn len(&self) -> usize {
        self.ds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds.is_empty()
    }

    /// Width of the decoder representations this retriever accepts.
    pub fn input_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.ds.dim(), PcaModel::input_dim)
    }

    /// Width of the space searched and cached in.
    pub fn query_dim(&self) -> usize {
        self.ds.dim()
    }

    /// Maps a decoder representation into the query space.
    pub fn to_query(&self, repr: &[f32], out: &mut [f32]) -> Result<()> {
        match &self.pca {
            Some(p) => p.apply_into(repr, out),
            None => {
                check_dim(self.ds.dim(), repr.len())?;
                out.copy_from_slice(repr);
                Ok(())
            }
        }
    }

    /// Searches a row-major block of queries already in the query space.
    pub fn search_batch(&self, queries: &[f32], k: usize) -> Result<Vec<NeighborSet>> {
        match &self.index {
            Some(idx) => idx.search_batch(&self.ds, queries, k, self.nprobe),
            None => exact_knn_batch(&self.ds, queries, k),
        }
    }
}
