mod support;

use std::time::Duration;

use mushra::osc::{ClientEvent, Notification};
use mushra::session::{read_results, SessionMeta};
use support::{notifications_until, send, start};

const ATTRIBUTES: [&str; 4] = ["basic_audio_quality", "localizability", "spatial_quality", "timbral_quality"];
const LABELS: [&str; 4] = ["A", "B", "C", "D"];
const WAIT: Duration = Duration::from_secs(3);

fn rate_all(server: &mut mushra::server::Server, notify: &std::net::UdpSocket, trial: usize) {
    for (a, attr) in ATTRIBUTES.iter().enumerate() {
        for (l, label) in LABELS.iter().enumerate() {
            let value = (10 * trial + 7 * a + 3 * l) as i32;
            send(
                server,
                &ClientEvent::Rating {
                    attribute: attr.to_string(),
                    label: label.to_string(),
                    value,
                },
            );
            let want = Notification::Rating {
                attribute: attr.to_string(),
                label: label.to_string(),
                value,
            };
            let seen = notifications_until(notify, WAIT, |n| *n == want);
            assert_eq!(seen.last(), Some(&want), "rating {attr}/{label} not acknowledged");
        }
    }
}

#[test]
fn complete_session_writes_unblinded_results() {
    let dir = tempfile::tempdir().unwrap();
    let (mut server, notify) = start(dir.path(), &["s1", "s2"], None);

    send(&server, &ClientEvent::Play { label: "ref".into() });
    let seen = notifications_until(&notify, WAIT, |n| matches!(n, Notification::Stimulus { .. }));
    assert!(seen.contains(&Notification::Stimulus { label: "ref".into() }));

    send(&server, &ClientEvent::TrialNext);
    let seen = notifications_until(&notify, WAIT, |n| matches!(n, Notification::Phase { .. }));
    assert_eq!(seen.last(), Some(&Notification::Phase { phase: "rating".into() }));

    // an advance with cells missing is refused and names every one of them
    send(&server, &ClientEvent::TrialNext);
    let seen = notifications_until(&notify, WAIT, |n| matches!(n, Notification::Missing { .. }));
    match seen.last() {
        Some(Notification::Missing { cells }) => assert_eq!(cells.len(), 16),
        other => panic!("expected missing cells, got {other:?}"),
    }

    for trial in 0..2 {
        rate_all(&mut server, &notify, trial);
        send(&server, &ClientEvent::TrialNext);
        let want = if trial == 0 { "rating" } else { "done" };
        let seen = notifications_until(&notify, WAIT, |n| matches!(n, Notification::Phase { .. }));
        assert_eq!(seen.last(), Some(&Notification::Phase { phase: want.into() }));
    }
    assert!(server.is_finished());

    let report = server.shutdown().unwrap();
    assert!(!report.aborted);
    assert!(report.result.csv_path.ends_with("results_t01_s5.csv"));
    let rows = read_results(&report.result.csv_path).unwrap();
    assert_eq!(rows.len(), 32);
    let meta: SessionMeta =
        serde_json::from_str(&std::fs::read_to_string(&report.result.meta_path).unwrap()).unwrap();
    assert!(!meta.aborted);
    for r in &rows {
        assert_eq!(meta.trials[r.trial].labels[&r.label], r.condition);
        let a = ATTRIBUTES.iter().position(|x| *x == r.attribute.id()).unwrap();
        let l = LABELS.iter().position(|x| *x == r.label).unwrap();
        assert_eq!(usize::from(r.value), 10 * r.trial + 7 * a + 3 * l);
    }
    assert!(dir.path().join("out").join(meta.telemetry.unwrap()).is_file());
}

#[test]
fn interrupted_session_is_saved_as_aborted() {
    let dir = tempfile::tempdir().unwrap();
    let (server, notify) = start(dir.path(), &["s1"], None);
    send(&server, &ClientEvent::TrialNext);
    notifications_until(&notify, WAIT, |n| matches!(n, Notification::Phase { .. }));
    send(
        &server,
        &ClientEvent::Rating {
            attribute: "localizability".into(),
            label: "B".into(),
            value: 55,
        },
    );
    notifications_until(&notify, WAIT, |n| matches!(n, Notification::Rating { .. }));

    let report = server.shutdown().unwrap();
    assert!(report.aborted);
    let name = report.result.csv_path.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.contains("aborted"), "{name}");
    let rows = read_results(&report.result.csv_path).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].value, 55);
}

#[test]
fn invalid_requests_are_answered_with_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (server, notify) = start(dir.path(), &["s1"], None);
    send(&server, &ClientEvent::Seat { id: "Q7".into() });
    let seen = notifications_until(&notify, WAIT, |n| matches!(n, Notification::Error { .. }));
    assert!(matches!(seen.last(), Some(Notification::Error { .. })));

    send(&server, &ClientEvent::Play { label: "Z".into() });
    let seen = notifications_until(&notify, WAIT, |n| matches!(n, Notification::Error { .. }));
    assert!(matches!(seen.last(), Some(Notification::Error { .. })));

    send(&server, &ClientEvent::Seat { id: "D2".into() });
    let seen = notifications_until(&notify, WAIT, |n| matches!(n, Notification::Seat { .. }));
    assert_eq!(seen.last(), Some(&Notification::Seat { id: "D2".into() }));
    let report = server.shutdown().unwrap();
    assert!(report.router.rejected >= 2);
    assert_eq!(report.engine.nonfinite, 0);
}
