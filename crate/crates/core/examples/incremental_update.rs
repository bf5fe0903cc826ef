//! Full index once, then edit, add and delete leaves and refresh only what
//! changed. The result is checked against a from-scratch rebuild.
//!
//!     cargo run --example incremental_update

use treemem::engine::Engine;
use treemem::eval::{prepare, CorpusSpec, SyntheticCorpus};
use treemem::indexer::{compare_dumps, IndexMode};
use treemem::memory::DocumentRecord;

fn main() -> treemem::Result<()> {
    let corpus = SyntheticCorpus::generate(CorpusSpec {
        tenants: 4,
        seats_per_tenant: 5,
        projects_per_seat: 5,
        docs_per_project: 1,
        ..Default::default()
    });
    let engine = Engine::mock();
    let full = prepare(&engine, &corpus)?;
    println!("full index: {} nodes, {} llm calls", full.nodes_built, full.usage.llm_calls);

    let at = corpus.documents[0].timestamp;
    engine.ingest(&[DocumentRecord {
        doc_id: "doc-t1-s1-p1-1".into(),
        node_business_key: "t1-s1-p1".into(),
        timestamp: at,
        text: "budget: revised-900\nowner: new lead".into(),
    }])?;
    engine.add_node("t2-s3-p6", "project", Some("t2-s3"))?;
    engine.ingest(&[DocumentRecord {
        doc_id: "doc-t2-s3-p6-1".into(),
        node_business_key: "t2-s3-p6".into(),
        timestamp: at,
        text: "status: just started".into(),
    }])?;
    engine.delete_node("t4-s5-p5")?;
    println!("dirty leaves: {}", engine.dirty().len());

    let inc = engine.index(IndexMode::Incremental)?;
    println!(
        "incremental: {} leaves + {} ancestors rebuilt, {} llm calls ({:.1}% of full)",
        inc.leaves_built.len(),
        inc.internal_built.len(),
        inc.usage.llm_calls,
        100.0 * inc.usage.llm_calls as f64 / full.usage.llm_calls as f64
    );

    // same topology and documents, built from scratch
    let fresh = Engine::mock();
    fresh.load_tree(&engine.tree().to_schema())?;
    let docs: Vec<DocumentRecord> = engine
        .store()
        .documents()
        .into_iter()
        .map(|d| DocumentRecord {
            doc_id: d.doc_id,
            node_business_key: d.node.to_string(),
            timestamp: d.timestamp,
            text: d.text,
        })
        .collect();
    fresh.ingest(&docs)?;
    fresh.index(IndexMode::Full)?;
    let eq = compare_dumps(&engine.dump(), &fresh.dump());
    println!("identical to full rebuild: {} ({} diffs)", eq.identical, eq.diffs.len());
    Ok(())
}
