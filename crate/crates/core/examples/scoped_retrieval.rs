//! The same question asked from different scopes. Candidates come only from
//! the scope's subtree, so another tenant's facts never surface.
//!
//!     cargo run --example scoped_retrieval

use treemem::engine::{Engine, KOverrides};
use treemem::eval::{prepare, CorpusSpec, SyntheticCorpus};

fn main() -> treemem::Result<()> {
    let corpus = SyntheticCorpus::generate(CorpusSpec {
        tenants: 2,
        seats_per_tenant: 2,
        projects_per_seat: 2,
        ..Default::default()
    });
    let engine = Engine::mock();
    prepare(&engine, &corpus)?;

    let fact = corpus.facts.iter().find(|f| f.project.as_str().contains("tenant:t1/")).unwrap();
    let q = format!("What is the {} for {}?", fact.key, fact.doc_id);
    println!("{q}   (planted answer: {})\n", fact.value);

    for scope in ["global", "t1", "t1-s1", "t2", "t2-s2-p1"] {
        let k = KOverrides { k_summary: Some(2), ..Default::default() };
        let hits = engine.retrieve(&q, scope, &k)?;
        let r = engine.query(&q, scope, &k)?;
        println!(
            "scope {scope:<9} pool {:>2} nodes  answer {:<14} top qa: {}",
            hits.scored.len(),
            r.answer,
            hits.qa_hits.first().map(|h| format!("{} ({:.3})", h.question, h.score)).unwrap_or_default()
        );
    }
    Ok(())
}
