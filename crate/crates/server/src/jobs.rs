use std::sync::atomic::Ordering;
use std::sync::Arc;

use diffpop::classifier::{train_cs, TrainReport};
use diffpop::datastore::{CompositeRecord, Split};
use serde::{Deserialize, Serialize};

use crate::routes::RetrainRequest;
use crate::AppState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

/// A retraining job as reported by `GET /api/jobs/{id}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub status: JobState,
    /// Every state the job has been in, oldest first.
    pub history: Vec<JobState>,
    /// Labeled records the job trains and validates on.
    pub records: usize,
    pub checkpoint: Option<String>,
    pub report: Option<TrainReport>,
    pub error: Option<String>,
}

impl AppState {
    pub fn job(&self, id: u64) -> Option<Job> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(&id).cloned()
    }

    fn update_job(&self, id: u64, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get_mut(&id) {
            f(job);
            if job.history.last() != Some(&job.status) {
                job.history.push(job.status);
            }
        }
    }

    /// Queues a retraining job on `records` and starts it on a blocking
    /// thread. Returns the job id.
    pub(crate) fn start_retrain(self: &Arc<Self>, records: Vec<CompositeRecord>, req: RetrainRequest) -> u64 {
        let id = self.next_job.fetch_add(1, Ordering::Relaxed);
        let job = Job {
            id,
            status: JobState::Queued,
            history: vec![JobState::Queued],
            records: records.len(),
            checkpoint: None,
            report: None,
            error: None,
        };
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).insert(id, job);
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            state.update_job(id, |j| j.status = JobState::Running);
            match state.run_retrain(id, &records, &req) {
                Ok((path, report)) => state.update_job(id, |j| {
                    j.status = JobState::Done;
                    j.checkpoint = Some(path);
                    j.report = Some(report);
                }),
                Err(e) => {
                    log::warn!("retrain job {id} failed: {e}");
                    state.update_job(id, |j| {
                        j.status = JobState::Failed;
                        j.error = Some(e.to_string());
                    })
                }
            }
        });
        id
    }

    fn run_retrain(&self, id: u64, records: &[CompositeRecord], req: &RetrainRequest) -> diffpop::Result<(String, TrainReport)> {
        let mut cfg = self.retrain.train.clone();
        if let Some(epochs) = req.epochs {
            cfg.epochs = epochs;
        }
        cfg.validate()?;
        let kind = req.kind.unwrap_or(self.retrain.kind);
        let (train, test): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.split == Split::Train);
        // With no training-split labels, fit on whatever was labeled.
        let (train, test) = if train.is_empty() { (test, Vec::new()) } else { (train, test) };
        let cs = train_cs::<f64>(&self.library, &train, &test, kind, self.retrain.grid, &cfg)?;
        let dir = self.dir.join("checkpoints");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("cs-job-{id}.dpnet"));
        cs.save(&path)?;
        let report = cs.report().cloned().expect("freshly trained classifier carries a report");
        Ok((path.display().to_string(), report))
    }
}
