"""Prompt assembly, reply mining, and the generate-validate-repair loop."""

import os

import pytest

from sceneweaver.dsl import parse_program, print_program, validate_program
from sceneweaver.errors import (
    ExhaustedAttempts,
    NoProgramFound,
    UnknownInstruction,
)
from sceneweaver.llm import (
    DEFAULT_MAX_ATTEMPTS,
    EXAMPLES,
    STUB_CORPUS,
    build_prompt,
    builtin_reference,
    default_template,
    dump_prompt,
    extract_code_block,
    generate_with_repair,
    offline_stub,
    save_transcripts,
    stub_endpoint,
)


# --- prompt assembly ---------------------------------------------------------


def test_build_prompt_substitutes_instruction():
    msgs = build_prompt(default_template(), "Drop a ball.")
    assert msgs[0]["role"] == "system"
    assert msgs[-1]["role"] == "user"
    assert msgs[-1]["content"] == "Instruction: Drop a ball."
    # in-context examples ride along in the system message
    assert "Drop 5 basketballs on the table." in msgs[0]["content"]


def test_build_prompt_warns_on_empty_instruction():
    with pytest.warns(UserWarning):
        build_prompt(default_template(), "   ")


def test_builtin_reference_covers_catalog():
    ref = builtin_reference()
    from sceneweaver.dsl import BUILTINS
    for name in BUILTINS:
        assert f"{name}(" in ref
    # optional parameters marked with a question mark
    assert "retrieve_asset(Scene, Text, Boolean?, Boolean?) -> Object" in ref


def test_dump_prompt_is_json():
    import json

    data = json.loads(dump_prompt(default_template(), "x"))
    assert data[0]["role"] == "system"


# --- code block extraction ------------------------------------------------------


def test_extract_fenced_block():
    text = 'Sure!\n```\nx = detect_object(scene, "a")\n```\nDone.'
    assert extract_code_block(text) == 'x = detect_object(scene, "a")'


def test_extract_first_of_two_blocks():
    text = "```\na = 1\n```\nor maybe\n```\nb = 2\n```"
    assert extract_code_block(text) == "a = 1"


def test_extract_language_tagged_block():
    text = "```dsl\na = 1\n```"
    assert extract_code_block(text) == "a = 1"


def test_extract_falls_back_to_parsing_suffix():
    text = ("I think the right edit is:\n"
            'box = detect_object(scene, "box")\n'
            "remove_object(scene, box)")
    got = extract_code_block(text)
    assert got.startswith("box = detect_object")
    assert parse_program(got).statements


def test_extract_rejects_prose():
    with pytest.raises(NoProgramFound):
        extract_code_block("I am sorry, I cannot help with that?!")


# --- generate / validate / repair ----------------------------------------------


class ScriptedEndpoint:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def __call__(self, messages):
        self.calls.append(list(messages))
        return self.replies.pop(0)


def test_generate_with_repair_recovers_from_bad_reply():
    bad = "```\nx = summon(scene)\n```"
    good = '```\nbox = detect_object(scene, "box")\n```'
    endpoint = ScriptedEndpoint([bad, good])
    prog, transcripts = generate_with_repair(endpoint, default_template(), "go")
    assert validate_program(prog) == []
    assert len(transcripts) == 2
    assert transcripts[0].diagnostics
    assert transcripts[1].diagnostics == []
    # the repair prompt quotes the diagnostics back
    repair_msgs = endpoint.calls[1]
    assert "rejected" in repair_msgs[-1]["content"]
    assert "unknown builtin" in repair_msgs[-1]["content"]


def test_generate_with_repair_exhausts_attempts():
    endpoint = ScriptedEndpoint(["garbage"] * DEFAULT_MAX_ATTEMPTS)
    with pytest.raises(ExhaustedAttempts) as ei:
        generate_with_repair(endpoint, default_template(), "go")
    assert DEFAULT_MAX_ATTEMPTS == 3
    assert len(ei.value.transcripts) == 3
    assert len(endpoint.calls) == 3


def test_generate_with_repair_validates_attempt_count():
    with pytest.raises(ValueError):
        generate_with_repair(ScriptedEndpoint([]), default_template(), "x",
                             max_attempts=0)


def test_save_transcripts_numbered_files(tmp_path):
    bad = "```\nx = summon(scene)\n```"
    good = '```\nbox = detect_object(scene, "box")\n```'
    _, transcripts = generate_with_repair(ScriptedEndpoint([bad, good]),
                                          default_template(), "go")
    out = str(tmp_path / "t")
    save_transcripts(transcripts, out)
    assert sorted(os.listdir(out)) == ["attempt_1.txt", "attempt_2.txt"]
    body = open(os.path.join(out, "attempt_1.txt")).read()
    assert "--- response ---" in body
    assert "--- diagnostics ---" in body
    assert "unknown builtin" in body


# --- offline corpus ---------------------------------------------------------------


def test_stub_corpus_matches_examples():
    assert len(EXAMPLES) == 10
    assert STUB_CORPUS == dict(EXAMPLES)


def test_all_corpus_programs_parse_validate_and_roundtrip():
    for instruction, program in EXAMPLES:
        prog = parse_program(program)
        assert validate_program(prog) == [], instruction
        assert parse_program(print_program(prog)) == prog, instruction


def test_offline_stub_known_and_unknown():
    reply = offline_stub("Drop 5 basketballs on the table.")
    src = extract_code_block(reply)
    assert parse_program(src) == parse_program(
        STUB_CORPUS["Drop 5 basketballs on the table."])
    with pytest.raises(UnknownInstruction):
        offline_stub("Paint the ceiling plaid.")


def test_stub_endpoint_end_to_end():
    prog, transcripts = generate_with_repair(
        stub_endpoint, default_template(), "Shatter the box.")
    assert len(transcripts) == 1
    assert validate_program(prog) == []
    assert print_program(prog) == STUB_CORPUS["Shatter the box."]
