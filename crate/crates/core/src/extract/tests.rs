use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::catalog::{Dtype, Document, Segment, Value};

const TEXT: &str = "Alice Smith plays for the Hawks. She was born in 1988. Her team won twice. She likes chess.";

fn doc() -> Document {
    Document {
        doc_id: "d1".into(),
        text: TEXT.into(),
        token_count: count_tokens(TEXT),
        summary: String::new(),
        embedding: None,
    }
}

fn segments() -> Vec<Segment> {
    crate::text::sentence_spans(TEXT)
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| Segment {
            seg_id: format!("d1#{i}"),
            doc_id: "d1".into(),
            span: (a, b),
            text: TEXT[a..b].to_string(),
            token_count: count_tokens(&TEXT[a..b]),
            embedding: Vec::new(),
        })
        .collect()
}

fn born() -> AttributeSpec {
    AttributeSpec::new("Players", "born", Dtype::Number, "year of birth")
}

fn team() -> AttributeSpec {
    AttributeSpec::new("Players", "team", Dtype::Categorical, "team the player plays for")
}

fn truth() -> Vec<TruthRecord> {
    let s = TEXT.find("She was born").unwrap();
    let t = TEXT.find("the Hawks").unwrap();
    vec![
        TruthRecord {
            doc_id: "d1".into(),
            attribute: "born".into(),
            value: Value::Number(1988.0),
            span_start: s,
            span_end: s + 22,
        },
        TruthRecord {
            doc_id: "d1".into(),
            attribute: "Players.team".into(),
            value: Value::Text("Hawks".into()),
            span_start: t,
            span_end: t + 9,
        },
    ]
}

fn mock(billing: Billing) -> Arc<MockProvider> {
    Arc::new(MockProvider::new(truth(), billing, default_tokenizer()))
}

fn extractor(p: Arc<MockProvider>) -> Extractor {
    Extractor::new(p, default_tokenizer()).with_retry(RetryPolicy::immediate(3))
}

#[test]
fn mock_answers_only_when_span_is_supplied() {
    let p = mock(Billing::Prompt);
    let ex = extractor(p.clone());
    let segs = segments();
    let mut sink = Charges::new();
    let hit = ex.extract_attribute("d1", &born(), &[&segs[1]], &mut sink).unwrap();
    assert_eq!(hit.result.value, Value::Number(1988.0));
    assert_eq!(hit.result.provenance, vec!["d1#1".to_string()]);
    assert!(!hit.cached);

    let ex = extractor(p.clone());
    let miss = ex.extract_attribute("d1", &born(), &[&segs[0], &segs[2]], &mut sink).unwrap();
    assert_eq!(miss.result.value, Value::Null);
    assert!(miss.result.provenance.is_empty());
    assert_eq!(sink.calls(), 2);
}

#[test]
fn empty_segment_list_is_free_null() {
    let p = mock(Billing::Prompt);
    let ex = extractor(p.clone());
    let mut sink = Charges::new();
    let r = ex.extract_attribute("d1", &born(), &[], &mut sink).unwrap();
    assert_eq!(r.result, ExtractionResult::null());
    assert_eq!(p.calls(), 0);
    assert_eq!(sink.tokens(), 0);
}

#[test]
fn cache_hit_is_identical_and_free() {
    let p = mock(Billing::Prompt);
    let ex = extractor(p.clone());
    let segs = segments();
    let refs: Vec<&Segment> = segs.iter().collect();
    let mut sink = Charges::new();
    let first = ex.extract_attribute("d1", &team(), &refs, &mut sink).unwrap();
    let spent = sink.tokens();
    assert!(spent > 0);
    let second = ex.extract_attribute("d1", &team(), &refs, &mut sink).unwrap();
    assert!(second.cached);
    assert_eq!(first.result, second.result);
    assert_eq!(sink.tokens(), spent);
    assert_eq!(p.calls(), 1);
    assert_eq!(first.result.value, Value::Text("Hawks".into()));
}

#[test]
fn segment_billing_charges_supplied_tokens() {
    let ex = extractor(mock(Billing::Segments));
    let segs = segments();
    let refs: Vec<&Segment> = segs.iter().take(3).collect();
    let mut sink = Charges::new();
    ex.extract_attribute("d1", &born(), &refs, &mut sink).unwrap();
    let expected: usize = refs.iter().map(|s| s.token_count).sum();
    assert_eq!(sink.tokens(), expected);
}

#[test]
fn prompt_billing_counts_prompt_and_reply() {
    let ex = extractor(mock(Billing::Prompt));
    let segs = segments();
    let mut sink = Charges::new();
    ex.extract_attribute("d1", &born(), &[&segs[1]], &mut sink).unwrap();
    let prompt = prompt::extract_prompt(&born(), &[&segs[1]]);
    let e = &sink.entries[0];
    assert_eq!(e.input_tokens, count_tokens(&prompt));
    assert_eq!(e.output_tokens, count_tokens(r#"{"born":1988.0}"#));
}

#[test]
fn single_flight_under_contention() {
    let p = mock(Billing::Prompt);
    let ex = extractor(p.clone());
    let segs = segments();
    let refs: Vec<&Segment> = segs.iter().collect();
    let total: usize = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|_| {
                s.spawn(|| {
                    let mut sink = Charges::new();
                    ex.extract_attribute("d1", &born(), &refs, &mut sink).unwrap();
                    sink.calls()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert_eq!(p.calls(), 1);
    assert_eq!(total, 1);
}

#[test]
fn retries_transient_failures() {
    let p = Arc::new(MockProvider::new(truth(), Billing::Prompt, default_tokenizer()).failing_first(2));
    let ex = extractor(p.clone());
    let segs = segments();
    let mut sink = Charges::new();
    let r = ex.extract_attribute("d1", &born(), &[&segs[1]], &mut sink).unwrap();
    assert_eq!(r.result.value, Value::Number(1988.0));
    assert_eq!(p.calls(), 3);
    // Failed attempts are not billed.
    assert_eq!(sink.calls(), 1);
}

#[test]
fn gives_up_after_three_attempts() {
    let p = Arc::new(MockProvider::new(truth(), Billing::Prompt, default_tokenizer()).failing_first(3));
    let ex = extractor(p.clone());
    let segs = segments();
    let mut sink = Charges::new();
    let err = ex.extract_attribute("d1", &born(), &[&segs[1]], &mut sink).unwrap_err();
    assert!(matches!(err, ExtractError::Provider { attempts: 3, .. }));
    assert!(!ex.cache().contains("d1", "Players.born"));
    // The slot stays retryable.
    assert!(ex.extract_attribute("d1", &born(), &[&segs[1]], &mut sink).is_ok());
}

#[test]
fn reply_parsing() {
    let a = born();
    assert_eq!(prompt::parse_extract_reply(r#"{"born": 1988}"#, &a), (Value::Number(1988.0), false));
    assert_eq!(
        prompt::parse_extract_reply("```json\n{\"born\": \"1,988\"}\n```", &a),
        (Value::Number(1988.0), false)
    );
    assert_eq!(prompt::parse_extract_reply(r#"{"born": [1988, 1989]}"#, &a), (Value::Null, true));
    assert_eq!(prompt::parse_extract_reply("no idea", &a), (Value::Null, true));
    assert_eq!(prompt::parse_extract_reply(r#"{"born": null}"#, &a), (Value::Null, false));
    assert_eq!(prompt::parse_extract_reply(r#"{"born": "unknown"}"#, &a), (Value::Null, true));
    assert_eq!(
        prompt::parse_extract_reply(r#"{"BORN": {"value": 7, "evidence": "x"}}"#, &a),
        (Value::Number(7.0), false)
    );
}

#[test]
fn sampling_locates_evidence() {
    let ex = extractor(mock(Billing::Prompt));
    let d = doc();
    let segs = segments();
    let refs: Vec<&Segment> = segs.iter().collect();
    let mut sink = Charges::new();
    let results = ex.sample_document(&d, &refs, &[born(), team()], &mut sink).unwrap();
    assert_eq!(sink.calls(), 1);
    assert_eq!(results[0].value, Value::Number(1988.0));
    assert_eq!(results[0].provenance, vec!["d1#1".to_string()]);
    assert_eq!(results[1].value, Value::Text("Hawks".into()));
    assert_eq!(results[1].provenance, vec!["d1#0".to_string()]);
    // Sampled cells are reused by later extractions.
    let later = ex.extract_attribute("d1", &born(), &refs, &mut sink).unwrap();
    assert!(later.cached);
    assert_eq!(sink.calls(), 1);
    // And a repeated sample does not call again.
    ex.sample_document(&d, &refs, &[born()], &mut sink).unwrap();
    assert_eq!(sink.calls(), 1);
}

#[test]
fn sampling_drops_values_without_evidence() {
    struct Liar;
    impl Provider for Liar {
        fn id(&self) -> String {
            "liar".into()
        }
        fn complete(&self, _: &ProviderRequest<'_>) -> Result<ProviderResponse, ProviderError> {
            Ok(ProviderResponse {
                text: r#"{"born": {"value": 1700, "evidence": "made up"}}"#.into(),
                input_tokens: 1,
                output_tokens: 1,
            })
        }
    }
    let ex = Extractor::new(Arc::new(Liar), default_tokenizer());
    let segs = segments();
    let refs: Vec<&Segment> = segs.iter().collect();
    let r = ex.sample_document(&doc(), &refs, &[born()], &mut Charges::new()).unwrap();
    assert_eq!(r[0].value, Value::Null);
    assert!(r[0].parse_warning);
    assert_eq!(ex.warnings(), 1);
}

#[test]
fn synthesizes_exemplars() {
    let ex = extractor(mock(Billing::Prompt));
    let mut sink = Charges::new();
    let list = ex.synthesize_exemplars(&born(), 20, &mut sink).unwrap();
    assert_eq!(list.len(), 20);
    assert!(list[0].contains("year of birth"));
    assert_eq!(sink.entries[0].kind, RequestKind::Synthesize);
}

#[test]
fn audit_commit_assigns_sequence() {
    let log = AuditLog::new();
    let mut a = Charges::new();
    a.record("d1", "T.a", RequestKind::Extract, 10, 2);
    let mut b = Charges::new();
    b.record("d2", "T.a", RequestKind::Extract, 5, 1);
    b.record("d2", "T.b", RequestKind::Extract, 7, 1);
    log.commit(a);
    log.commit(b);
    let e = log.entries();
    assert_eq!(e.iter().map(|x| x.timestamp).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(e[2].attribute, "T.b");
    assert_eq!(log.total_tokens(), 26);
    assert_eq!(log.tokens_since(1), 14);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    log.write_jsonl(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let first: AuditEntry = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first, e[0]);
}

/// Serves `replies` in order, one per connection, and returns the raw requests.
fn canned_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            head.push_str(&String::from_utf8_lossy(&buf));
            seen.push(head);
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn http_provider_round_trip() {
    let body = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": "{\"born\": 1988}"}}],
        "usage": {"prompt_tokens": 42, "completion_tokens": 5},
    })
    .to_string();
    let (url, server) = canned_server(vec![(500, "{}".into()), (200, body)]);
    let http = HttpProvider::new(&url, "test-model", Some("secret".into()), default_tokenizer());
    let ex = Extractor::new(Arc::new(http), default_tokenizer()).with_retry(RetryPolicy::immediate(3));
    let segs = segments();
    let mut sink = Charges::new();
    let r = ex.extract_attribute("d1", &born(), &[&segs[1]], &mut sink).unwrap();
    assert_eq!(r.result.value, Value::Number(1988.0));
    assert_eq!((sink.entries[0].input_tokens, sink.entries[0].output_tokens), (42, 5));
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen[1].contains("Bearer secret"));
    assert!(seen[1].contains("test-model"));
    assert!(seen[1].contains("year of birth"));
}

proptest! {
    #[test]
    fn calls_equal_distinct_keys(keys in proptest::collection::vec((0usize..4, 0usize..2), 0..30)) {
        let p = mock(Billing::Segments);
        let ex = extractor(p.clone());
        let segs = segments();
        let refs: Vec<&Segment> = segs.iter().collect();
        let attrs = [born(), team()];
        let mut sink = Charges::new();
        for (d, a) in &keys {
            ex.extract_attribute(&format!("doc{d}"), &attrs[*a], &refs, &mut sink).unwrap();
        }
        let distinct: std::collections::HashSet<_> = keys.iter().collect();
        prop_assert_eq!(p.calls(), distinct.len());
        prop_assert_eq!(sink.calls(), distinct.len());
        prop_assert_eq!(ex.cache().len(), distinct.len());
    }

    #[test]
    fn parser_never_panics(s in ".{0,80}") {
        let _ = prompt::parse_extract_reply(&s, &born());
        let _ = prompt::parse_exemplars(&s);
    }
}
