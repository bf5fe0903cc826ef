//! Planted-fact benchmark: tree memory against flat chunk retrieval.
//!
//!     cargo run --release --example benchmark

use treemem::engine::Engine;
use treemem::eval::{prepare, render_table, run_benchmark, BenchOptions, CorpusSpec, SyntheticCorpus, SystemKind};

fn main() -> treemem::Result<()> {
    let corpus = SyntheticCorpus::generate(CorpusSpec::default());
    let engine = Engine::mock();
    let built = prepare(&engine, &corpus)?;
    println!(
        "{} documents, {} nodes, {} llm calls to index\n",
        corpus.documents.len(),
        built.nodes_built,
        built.usage.llm_calls
    );

    let opts = BenchOptions { flat_k: 5, ..Default::default() };
    for (name, queries) in
        [("in-scope", corpus.retrieval_queries(50, 1)), ("random scope", corpus.cross_scope_queries(50, 2))]
    {
        let tree = run_benchmark(&engine, &corpus, &queries, SystemKind::Hltm, &opts)?;
        let flat = run_benchmark(&engine, &corpus, &queries, SystemKind::Flatrag, &opts)?;
        println!("{name} queries ({} answerable)\n{}", tree.answerable, render_table(&[&tree, &flat]));
    }
    Ok(())
}
