//! Browser bindings: compile a script, show where Stores would be injected,
//! and rewrite one script against the outputs of another. Everything runs
//! on plans only; no data is read.
//!
//! Build with `wasm-pack build --target web --out-dir www/pkg`.

use mrreuse::lang::compile;
use mrreuse::matcher::{rewrite_workflow, RewriteContext};
use mrreuse::plan::{render_plan, split_into_jobs, to_physical, Workflow, WorkflowId};
use mrreuse::repository::{EntryId, EntryStats, Fingerprint, RepositoryEntry};
use mrreuse::subjob::{enumerate_candidates, extract_subjob_plan, Heuristic};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct JobView {
    id: String,
    output: String,
    plan: String,
}

fn workflow(script: &str, id: &str) -> Result<Workflow, String> {
    let lp = compile(script).map_err(|e| e.to_string())?;
    let pp = to_physical(&lp);
    pp.validate().map_err(|e| e.to_string())?;
    Ok(split_into_jobs(&pp, &WorkflowId(id.into())))
}

fn jobs(wf: &Workflow) -> Vec<JobView> {
    wf.jobs
        .iter()
        .map(|j| JobView {
            id: j.id.0.clone(),
            output: j.output_path.clone(),
            plan: render_plan(&j.plan),
        })
        .collect()
}

fn respond(r: Result<serde_json::Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// The job split of a script.
#[wasm_bindgen]
pub fn explain(script: &str) -> String {
    respond(workflow(script, "w1").map(|wf| json!({ "jobs": jobs(&wf), "deps": wf.deps })))
}

/// Operators a heuristic would materialize, per job.
#[wasm_bindgen]
pub fn injection_points(script: &str, heuristic: &str) -> String {
    respond((|| {
        let h: Heuristic = heuristic.parse().map_err(|e: mrreuse::subjob::UnknownHeuristic| e.to_string())?;
        let wf = workflow(script, "w1")?;
        let points: Vec<_> = wf.jobs.iter().flat_map(|j| enumerate_candidates(&wf.id, j, h)).collect();
        Ok(json!({ "heuristic": h.name(), "points": points }))
    })())
}

/// Treat every output of `stored` as a repository entry and rewrite
/// `incoming` to read them where its plans contain the stored ones.
#[wasm_bindgen]
pub fn rewrite(stored: &str, incoming: &str) -> String {
    respond((|| {
        let first = workflow(stored, "w1")?;
        let mut entries = Vec::new();
        for job in &first.jobs {
            for s in job.plan.stores() {
                let path = job.plan.op(s).path().unwrap_or_default().to_string();
                let Some(&src) = job.plan.inputs(s).first() else { continue };
                let plan = extract_subjob_plan(&job.plan, src, &path);
                entries.push(RepositoryEntry {
                    id: EntryId::from_seq(entries.len() as u64 + 1),
                    plan,
                    output_fingerprint: Fingerprint {
                        path: path.clone(),
                        mtime: 0,
                        bytes: 0,
                    },
                    output_path: path,
                    stats: EntryStats::default(),
                    created_at: 0,
                    last_reused_at: None,
                    reuse_count: 0,
                    input_fingerprints: Vec::new(),
                });
            }
        }
        // Intermediate outputs of the first script do not outlive it.
        entries.retain(|e| !first.is_tmp_path(&e.output_path));
        let second = workflow(incoming, "w2")?;
        let ctx = RewriteContext {
            entries: &entries,
            usable: &|_| true,
            forbidden_outputs: second.jobs.iter().flat_map(|j| j.output_paths()).collect(),
            read_nanos_per_byte: 0.0,
        };
        let (rewritten, report) = rewrite_workflow(&second, &ctx);
        Ok(json!({
            "entries": entries.iter().map(|e| json!({ "id": e.id.0, "output": e.output_path })).collect::<Vec<_>>(),
            "matches": report.matches,
            "ops_before": report.ops_before,
            "ops_after": report.ops_after,
            "before": jobs(&second),
            "after": jobs(&rewritten),
        }))
    })())
}
