//! File formats and atomic writes.
//!
//! Profile files are UTF-8 JSON:
//!
//! ```json
//! {
//!   "layers": [{"id": 0, "name": "conv1", "kind": "convolution",
//!               "fwd_time_us": 120, "bwd_time_us": 240,
//!               "output_bytes": 802816, "inputs": []}, ...],
//!   "env": {"capacity_bytes": 17179869184,
//!           "d2h_bw_bytes_per_s": 16000000000,
//!           "h2d_bw_bytes_per_s": 16000000000,
//!           "resident_base_bytes": 1073741824},
//!   "swap_out_time_us": [..],   // optional per-layer overrides
//!   "swap_in_time_us": [..]
//! }
//! ```
//!
//! Plan files are `{"classes": ["keep" | "swap" | "recompute", ...]}` with
//! one entry per layer. Timelines export to the Chrome trace event format;
//! memory traces to CSV. All writes go through a temp file and a rename so
//! interrupted runs never leave a corrupt artifact.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use pooch_core::model::{Placement, PlanReport, Profile};
use pooch_core::simulator::{Lane, MemoryTrace, Timeline};

pub fn read_profile(path: &Path) -> Result<Profile> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading profile {}", path.display()))?;
    let profile: Profile = serde_json::from_str(&text)
        .with_context(|| format!("parsing profile {}", path.display()))?;
    profile
        .validate()
        .map_err(|e| anyhow!("validating profile {}: {e}", path.display()))?;
    Ok(profile)
}

pub fn read_plan(path: &Path, profile: &Profile) -> Result<Placement> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading plan {}", path.display()))?;
    let placement: Placement =
        serde_json::from_str(&text).with_context(|| format!("parsing plan {}", path.display()))?;
    placement
        .validate_for(profile)
        .map_err(|e| anyhow!("validating plan {}: {e}", path.display()))?;
    Ok(placement)
}

pub fn write_profile(path: &Path, profile: &Profile) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(profile)?.as_bytes())
}

pub fn write_plan(path: &Path, placement: &Placement) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(placement)?.as_bytes())
}

pub fn write_report(path: &Path, report: &PlanReport) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(report)?.as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Chrome trace event format: one complete ("X") event per task, `ts` and
/// `dur` in microseconds, `tid` 0 = compute, 1 = device-to-host,
/// 2 = host-to-device.
pub fn write_chrome_trace(path: &Path, timeline: &Timeline) -> Result<()> {
    let events: Vec<serde_json::Value> = timeline
        .events
        .iter()
        .map(|e| {
            serde_json::json!({
                "name": e.kind.to_string(),
                "ph": "X",
                "ts": e.start_us,
                "dur": e.end_us - e.start_us,
                "pid": 0,
                "tid": match e.lane {
                    Lane::Compute => 0,
                    Lane::D2h => 1,
                    Lane::H2d => 2,
                },
            })
        })
        .collect();
    write_atomic(path, serde_json::to_string_pretty(&events)?.as_bytes())
}

/// CSV ledger: `time_us,delta_bytes,total_bytes,layer,reason`.
pub fn write_memtrace_csv(path: &Path, trace: &MemoryTrace) -> Result<()> {
    let mut out = String::from("time_us,delta_bytes,total_bytes,layer,reason\n");
    for e in &trace.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.time_us, e.delta_bytes, e.total_bytes, e.layer, e.reason
        ));
    }
    write_atomic(path, out.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .with_context(|| format!("creating temp file near {}", path.display()))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
