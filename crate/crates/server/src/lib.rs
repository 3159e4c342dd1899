//! Label service for the human-in-the-loop stage.
//!
//! Serves unlabeled composites with rendered previews, accepts plausibility
//! labels, exports the labeled corpus and retrains the structural classifier
//! on demand. Every mutation goes through one [`CorpusStore`] behind a mutex,
//! so merges are serialized and each one is fsynced to the audit log before
//! the request is acknowledged. Reads use an immutable snapshot of the corpus
//! that is swapped after every merge.

mod error;
mod jobs;
mod routes;

use std::collections::BTreeMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex, RwLock};

use diffpop::classifier::{ClassifierTrainConfig, InputKind, Library, DEFAULT_GRID};
use diffpop::datastore::{read_world, Corpus, CorpusStore};

pub use error::{ApiError, ServiceError};
pub use jobs::{Job, JobState};
pub use routes::{router, BatchItem, LabelAck, LabelRequest, RetrainRequest, Stats};

pub const DEFAULT_PORT: u16 = 8787;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// How the service trains a classifier when asked to.
#[derive(Clone, Debug)]
pub struct RetrainDefaults {
    pub kind: InputKind,
    pub grid: usize,
    pub train: ClassifierTrainConfig,
}

impl Default for RetrainDefaults {
    fn default() -> Self {
        Self { kind: InputKind::MaskDescriptor, grid: DEFAULT_GRID, train: ClassifierTrainConfig::default() }
    }
}

/// Shared state behind every handler.
pub struct AppState {
    dir: PathBuf,
    library: Library,
    writer: Mutex<CorpusStore>,
    snapshot: RwLock<Arc<Corpus>>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
    retrain: RetrainDefaults,
}

impl AppState {
    /// Opens a generated world directory: scenes and objects are loaded once
    /// and never written; the classifier corpus becomes the labeling store.
    pub fn open(dir: &Path, retrain: RetrainDefaults) -> Result<Arc<Self>, ServiceError> {
        let world = read_world(dir)?;
        let library = Library::from_corpus(&world);
        let store = CorpusStore::open(dir)?;
        let snapshot = RwLock::new(Arc::new(store.corpus().clone()));
        Ok(Arc::new(Self {
            dir: dir.to_path_buf(),
            library,
            writer: Mutex::new(store),
            snapshot,
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            retrain,
        }))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// The corpus as of the last completed merge.
    pub fn snapshot(&self) -> Arc<Corpus> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn publish(&self, corpus: Corpus) -> Arc<Corpus> {
        let snap = Arc::new(corpus);
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = snap.clone();
        snap
    }

    /// Waits for any in-flight merge. Merges sync the audit log before they
    /// return, so once this succeeds nothing acknowledged can be lost.
    pub fn flush(&self) {
        let store = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        log::info!("audit log at {} is up to date", store.audit_path().display());
    }
}

/// Serves `state` on `listener` until `shutdown` resolves, then flushes.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone(), static_dir.as_deref());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    tokio::task::spawn_blocking(move || state.flush()).await.map_err(std::io::Error::other)?;
    Ok(())
}
