//! Acknowledged inserts survive SIGKILL of the serving process.

mod common;

use std::net::TcpListener;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use unipool::client::Client;
use unipool::{PoolStore, StoreOptions};
use unipool_core::Partition;

use common::structured;

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn spawn_server(store: &std::path::Path, addr: &str) -> Child {
    Command::new(env!("CARGO_BIN_EXE_unipool"))
        .args(["serve", "--bind", addr, "--store"])
        .arg(store)
        .env("RUST_LOG", "warn")
        .env_remove("UNIPOOL_CONFIG")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap()
}

fn connect(addr: &str) -> Client {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        match Client::connect(addr) {
            Ok(c) => return c,
            Err(e) if Instant::now() > deadline => panic!("server never came up: {e}"),
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

#[test]
fn acked_rows_survive_kill_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let mut child = spawn_server(dir.path(), &addr);
    let mut client = connect(&addr);
    let mut acked = Vec::new();
    for i in 0..200i64 {
        let rep = client.ingest(&[structured("int-7", 100_000 * (i + 1), "density", (i % 4) as f64)]).unwrap();
        assert_eq!(rep.stored, 1);
        acked.push(rep.receipts[0].entry_id);
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let store = PoolStore::open(dir.path(), StoreOptions::default()).unwrap();
    let mut stored: Vec<u64> = Partition::ALL.iter().flat_map(|p| store.scan(*p)).map(|e| e.entry_id).collect();
    stored.sort();
    acked.sort();
    assert_eq!(stored, acked);
    drop(store);

    // A restarted server serves the same rows.
    let addr = format!("127.0.0.1:{}", free_port());
    let mut child = spawn_server(dir.path(), &addr);
    let total = connect(&addr).stats().unwrap().total;
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(total, 200);
}

#[cfg(unix)]
#[test]
fn sigterm_shuts_down_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let mut child = spawn_server(dir.path(), &addr);
    let mut client = connect(&addr);
    client.ingest(&[structured("int-7", 1_000_000, "density", 1.0)]).unwrap();
    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(15);
    let exit = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "server ignored SIGTERM");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(exit.success(), "{exit:?}");
    assert_eq!(PoolStore::open(dir.path(), StoreOptions::default()).unwrap().stats().total, 1);
}
