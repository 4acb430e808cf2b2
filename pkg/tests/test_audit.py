"""Tests for invarlab.audit — audit logging module."""

import json

from invarlab.audit import AUDIT_FILE, audit_log, read_audit


class TestAuditLog:
    def test_writes_local_jsonl(self, tmp_path):
        audit_file = tmp_path / "audit.jsonl"
        entry = {"command": "rank", "config_hash": "abc", "outcome": "ok"}
        audit_log(entry, audit_path=audit_file)

        lines = audit_file.read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 1
        data = json.loads(lines[0])
        assert data["command"] == "rank"
        assert "timestamp" in data

    def test_appends(self, tmp_path):
        audit_file = tmp_path / "audit.jsonl"
        audit_log({"command": "a"}, audit_path=audit_file)
        audit_log({"command": "b", "outcome": "error"}, audit_path=audit_file)
        assert [e["command"] for e in read_audit(audit_file)] == ["a", "b"]

    def test_entry_not_mutated(self, tmp_path):
        entry = {"command": "a"}
        audit_log(entry, audit_path=tmp_path / "audit.jsonl")
        assert entry == {"command": "a"}

    def test_default_path(self, in_tmp):
        audit_log({"command": "synth-gen"})
        assert (in_tmp / AUDIT_FILE).exists()
        assert read_audit()[0]["command"] == "synth-gen"

    def test_unwritable_path_only_warns(self, tmp_path):
        # a directory cannot be opened for appending
        audit_log({"command": "a"}, audit_path=tmp_path)

    def test_missing_file_reads_empty(self, tmp_path):
        assert read_audit(tmp_path / "none.jsonl") == []
