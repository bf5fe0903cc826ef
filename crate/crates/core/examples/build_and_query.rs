//! Build a small org tree, ingest a few documents, index and ask questions.
//!
//!     cargo run --example build_and_query

use chrono::Utc;
use treemem::engine::{Engine, KOverrides};
use treemem::indexer::IndexMode;
use treemem::memory::DocumentRecord;

fn doc(id: &str, project: &str, text: &str) -> DocumentRecord {
    DocumentRecord { doc_id: id.into(), node_business_key: project.into(), timestamp: Utc::now(), text: text.into() }
}

fn main() -> treemem::Result<()> {
    let engine = Engine::mock();
    engine.add_node("acme", "root", None)?;
    engine.add_node("sales", "team", Some("acme"))?;
    engine.add_node("crm-rollout", "project", Some("sales"))?;
    engine.add_node("pricing-v2", "project", Some("sales"))?;

    engine.ingest(&[
        doc("kickoff", "crm-rollout", "owner: Dana Whitfield\nbudget: 120k\nvendor: Nimbus"),
        doc("status-03", "crm-rollout", "status: pilot in two regions"),
        doc("memo", "pricing-v2", "owner: Lee Park\ndeadline: end of Q3"),
    ])?;
    let report = engine.index(IndexMode::Full)?;
    println!("indexed {} nodes with {} llm calls\n", report.nodes_built, report.usage.llm_calls);

    for (scope, q) in [
        ("crm-rollout", "What is the vendor for kickoff?"),
        ("sales", "What is the deadline for memo?"),
        ("acme", "What is the status for status-03?"),
    ] {
        let r = engine.query(q, scope, &KOverrides::default())?;
        println!(
            "[{scope}] {q}\n  -> {}  (cites {})",
            r.answer,
            r.citations.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
        );
    }

    let root = engine.memory("acme")?;
    println!("\nroot summary: {}", root.summary.concise);
    Ok(())
}
