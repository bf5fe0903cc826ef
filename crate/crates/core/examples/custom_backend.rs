//! Plugging in your own generator and embedder. Here a tracing wrapper
//! around the mock generator and a character-trigram embedder.
//!
//!     cargo run --example custom_backend

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use treemem::backend::{Backend, Completion, Embedder, ExtractionRequest, Generator, MockGenerator};
use treemem::config::Config;
use treemem::engine::{Engine, KOverrides};
use treemem::eval::{prepare, CorpusSpec, SyntheticCorpus};

#[derive(Default)]
struct Traced {
    calls: Mutex<BTreeMap<String, u32>>,
}

impl Generator for Traced {
    fn complete(&self, req: &ExtractionRequest) -> treemem::Result<Completion> {
        *self.calls.lock().entry(format!("{:?}", req.task)).or_default() += 1;
        MockGenerator.complete(req)
    }
}

struct Trigrams;

impl Embedder for Trigrams {
    fn dim(&self) -> usize {
        512
    }

    fn embed_raw(&self, texts: &[&str]) -> treemem::Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0; 512];
                let chars: Vec<char> = format!("  {}  ", t.to_lowercase()).chars().collect();
                for w in chars.windows(3) {
                    let h = w.iter().fold(17u32, |h, c| h.wrapping_mul(31).wrapping_add(*c as u32));
                    v[h as usize % 512] += 1.0;
                }
                v
            })
            .collect())
    }
}

fn main() -> treemem::Result<()> {
    let traced = Arc::new(Traced::default());
    let backend = Backend::new(traced.clone(), Arc::new(Trigrams));
    let engine = Engine::with_backend(Config::default(), backend)?;

    let corpus = SyntheticCorpus::generate(CorpusSpec {
        tenants: 1,
        seats_per_tenant: 2,
        projects_per_seat: 3,
        ..Default::default()
    });
    prepare(&engine, &corpus)?;
    let f = &corpus.facts[4];
    let r = engine.query(&format!("What is the {} for {}?", f.key, f.doc_id), "global", &KOverrides::default())?;
    println!("answer {} (planted {})\n", r.answer, f.value);

    println!("{:<16} calls", "task");
    for (task, n) in traced.calls.lock().iter() {
        println!("{task:<16} {n}");
    }
    Ok(())
}
