use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use outfit_dpo::experts::external::{ENDPOINT_ENV, DEFAULT_RUBRIC};
use outfit_dpo::experts::{ExternalScorer, QualityExpert, QualityRubric, ScoreRequest, ScorerFailure};
use outfit_dpo::Error;

/// Serves `replies` in order, one connection each, and returns the requests.
fn mock(replies: Vec<&'static str>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for reply in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            seen.push(line);
            let mut w = stream;
            w.write_all(reply.as_bytes()).unwrap();
        }
        seen
    });
    (addr, handle)
}

fn rubric() -> QualityRubric {
    QualityRubric::new(vec![vec![0.0, 0.0]], 1.0).unwrap()
}

#[test]
fn well_formed_exchange() {
    let (addr, h) = mock(vec!["{\"level\":7}\n", "{\"level\":10}\n"]);
    let s = ExternalScorer::new(addr, Duration::from_secs(5));
    assert_eq!(s.level(&[0.5, -1.25], "shoes").unwrap(), 7);
    assert_eq!(s.level(&[0.0, 0.0], "top").unwrap(), 10);
    let seen = h.join().unwrap();
    let req: ScoreRequest = serde_json::from_str(seen[0].trim()).unwrap();
    assert_eq!(req.candidate, vec![0.5, -1.25]);
    assert_eq!(req.category, "shoes");
    assert_eq!(req.rubric, DEFAULT_RUBRIC);
    assert!(seen[0].ends_with('\n'));
}

#[test]
fn protocol_violations_are_scorer_errors() {
    let (addr, h) = mock(vec!["{\"level\":11}\n", "{\"level\":0}\n", "not json\n", "{\"score\":3}\n"]);
    let s = ExternalScorer::new(addr, Duration::from_secs(5));
    for _ in 0..4 {
        assert!(matches!(s.level(&[1.0], "bag"), Err(Error::Scorer(_))));
    }
    h.join().unwrap();
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let h = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(800));
        drop(stream);
    });
    let s = ExternalScorer::new(addr, Duration::from_millis(150));
    let started = Instant::now();
    assert!(matches!(s.level(&[1.0], "bag"), Err(Error::Scorer(_))));
    assert!(started.elapsed() < Duration::from_millis(700));
    h.join().unwrap();
}

#[test]
fn failure_policy_falls_back_or_errors() {
    // bind then drop to get a port nobody listens on
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let ext = ExternalScorer::new(addr, Duration::from_millis(200));
    let mut q = QualityExpert {
        rubric: rubric(),
        external: Some(ext),
        on_failure: ScorerFailure::Fallback,
    };
    assert_eq!(q.score(&[0.0, 0.0], 0, "top").unwrap(), 10);
    q.on_failure = ScorerFailure::Error;
    assert!(matches!(q.score(&[0.0, 0.0], 0, "top"), Err(Error::Scorer(_))));
}

#[test]
fn external_level_overrides_rubric() {
    let (addr, h) = mock(vec!["{\"level\":2}\n"]);
    let q = QualityExpert {
        rubric: rubric(),
        external: Some(ExternalScorer::new(addr, Duration::from_secs(5))),
        on_failure: ScorerFailure::Error,
    };
    assert_eq!(q.score(&[0.0, 0.0], 0, "top").unwrap(), 2);
    h.join().unwrap();
}

#[test]
fn environment_overrides_configured_endpoint() {
    let t = Duration::from_secs(1);
    std::env::remove_var(ENDPOINT_ENV);
    assert_eq!(ExternalScorer::resolve(None, t), None);
    assert_eq!(ExternalScorer::resolve(Some("a:1"), t).unwrap().endpoint, "a:1");
    std::env::set_var(ENDPOINT_ENV, "b:2");
    assert_eq!(ExternalScorer::resolve(Some("a:1"), t).unwrap().endpoint, "b:2");
    std::env::remove_var(ENDPOINT_ENV);
}
