//! Serve the HTTP API on a local port and drive it with a blocking client.
//!
//!     cargo run --example http_service

use std::net::{SocketAddr, TcpListener};
use std::time::Duration;

use serde_json::{json, Value};
use treemem::engine::Engine;
use treemem::eval::{CorpusSpec, SyntheticCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let port = TcpListener::bind("127.0.0.1:0")?.local_addr()?.port();
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let engine = Engine::mock();
    std::thread::spawn(move || treemem::service::serve(engine, addr));
    std::thread::sleep(Duration::from_millis(300));

    let base = format!("http://{addr}");
    let http = reqwest::blocking::Client::new();
    let corpus = SyntheticCorpus::generate(CorpusSpec {
        tenants: 2,
        seats_per_tenant: 1,
        projects_per_seat: 2,
        ..Default::default()
    });

    http.put(format!("{base}/tree")).json(&corpus.schema).send()?.error_for_status()?;
    let jsonl: Vec<String> = corpus.documents.iter().map(|d| serde_json::to_string(d).unwrap()).collect();
    let r = http.post(format!("{base}/documents")).body(jsonl.join("\n")).send()?;
    println!("POST /documents -> {}", r.status());
    let r: Value = http.post(format!("{base}/index")).json(&json!({"mode": "full"})).send()?.json()?;
    println!("POST /index -> {} nodes built", r["nodes_built"]);

    let f = &corpus.facts[0];
    let body = json!({"text": format!("What is the {} for {}?", f.key, f.doc_id), "scope_business_key": "t1"});
    let r: Value = http.post(format!("{base}/query")).json(&body).send()?.json()?;
    println!("POST /query -> {} (planted {}), usage {}", r["answer"], f.value, r["usage"]);

    let r = http.delete(format!("{base}/nodes/t2-s1-p1")).send()?;
    println!("DELETE /nodes/t2-s1-p1 -> {} {}", r.status(), r.text()?);
    let r = http.get(format!("{base}/nodes/t2-s1-p1/memory")).send()?;
    println!("GET /nodes/t2-s1-p1/memory -> {} {}", r.status(), r.text()?);
    Ok(())
}
