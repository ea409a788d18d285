import sys

import pytest

from callctx.wire import LspSession, SourcePosition

WORKSPACE_FILE = """\
def helper(x):
    return x + 1


def caller_one():
    return helper(1)


def caller_two():
    # helper mention in a comment only
    return helper(2)
"""

CMD = [sys.executable, "-m", "callctx.analyzer_server"]


@pytest.fixture()
def workspace(tmp_path):
    (tmp_path / "mod.py").write_text(WORKSPACE_FILE)
    return tmp_path


def pos_of(text, uri, needle, occurrence=0):
    offset = -1
    for _ in range(occurrence + 1):
        offset = text.index(needle, offset + 1)
    line = text.count("\n", 0, offset)
    character = offset - (text.rfind("\n", 0, offset) + 1)
    return SourcePosition(uri, line, character)


def test_definition_and_references(workspace):
    with LspSession(CMD, root_path=workspace, timeout=30) as session:
        uri = session.open_document(workspace / "mod.py")
        call_pos = pos_of(WORKSPACE_FILE, uri, "helper(1)")
        defs = session.request_definition(call_pos)
        assert len(defs) == 1
        assert defs[0].start.line == 0  # `def helper` is the first line
        assert defs[0].start.character == 4

        refs = session.request_references(defs[0].start, include_declaration=False)
        ref_lines = sorted(r.start.line for r in refs)
        assert ref_lines == [
            pos_of(WORKSPACE_FILE, uri, "helper(1)").line,
            pos_of(WORKSPACE_FILE, uri, "helper(2)").line,
        ]


def test_position_in_comment_has_no_definition(workspace):
    with LspSession(CMD, root_path=workspace, timeout=30) as session:
        uri = session.open_document(workspace / "mod.py")
        comment_pos = pos_of(WORKSPACE_FILE, uri, "mention")
        assert session.request_definition(comment_pos) == []
