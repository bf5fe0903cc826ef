//! Mine recurring query shapes from a log, approve the profile and let the
//! next index build lean on it.
//!
//!     cargo run --example adaptation

use chrono::Utc;
use treemem::adaptation::{MiningWindow, QueryRecord};
use treemem::engine::Engine;
use treemem::eval::{prepare, CorpusSpec, SyntheticCorpus};
use treemem::indexer::IndexMode;

fn main() -> treemem::Result<()> {
    let corpus = SyntheticCorpus::generate(CorpusSpec {
        tenants: 1,
        seats_per_tenant: 2,
        projects_per_seat: 2,
        ..Default::default()
    });
    let engine = Engine::mock();
    prepare(&engine, &corpus)?;

    let now = Utc::now();
    let log: Vec<QueryRecord> = corpus
        .facts
        .iter()
        .take(40)
        .map(|f| QueryRecord { text: format!("which projects have {}={}?", f.key, f.value), timestamp: now })
        .chain((0..5).map(|i| QueryRecord {
            text: format!("anything owned by owner=person{i} in region=north"),
            timestamp: now,
        }))
        .collect();

    let profile = engine.mine_profile(Some(&log), Some(MiningWindow::trailing(now, 30, 10_000)), Some(3))?;
    println!("profile {} mined from {} queries", profile.id, log.len());
    for p in &profile.patterns {
        println!("  pattern {:>3}x  {}", p.support, p.template);
    }
    for f in &profile.facet_names {
        println!("  facet   {:>3}x  {}", f.support, f.name);
    }

    match engine.apply_profile(&profile.id) {
        Err(e) => println!("apply before review: {e}"),
        Ok(_) => unreachable!("review is required by default"),
    }
    engine.approve_profile(&profile.id)?;
    engine.apply_profile(&profile.id)?;
    let r = engine.index(IndexMode::Full)?;
    println!("rebuilt {} nodes with the active profile", r.nodes_built);
    Ok(())
}
