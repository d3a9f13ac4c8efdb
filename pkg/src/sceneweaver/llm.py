"""Program generation: prompt assembly, endpoint calls, extraction, repair.

The prompt pairs a catalog reference with in-context instruction/program
examples and substitutes the user instruction into a {PROMPT} placeholder.
Replies are mined for a fenced code block, parsed, and validated; on
diagnostics the endpoint is re-asked with the diagnostics appended. An
offline stub keyed by exact instruction text makes the whole pipeline
runnable without network access.
"""

from __future__ import annotations

import json
import os
import re
import warnings
from dataclasses import dataclass, field

from . import dsl
from .errors import (
    EndpointError,
    ExhaustedAttempts,
    NoProgramFound,
    UnknownInstruction,
)

DEFAULT_MAX_ATTEMPTS = 3
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_]*\n(.*?)```", re.DOTALL)

_PREAMBLE = """\
You write short programs in a small scene-editing language. Statements are
assignments, calls, or bounded loops `for i in 0..n { ... }`. Values are
numbers, strings, booleans, vectors `[x, y, z]`, and lists of vectors. The
variable `scene` is predefined. Only the functions listed below exist.
Answer with a single fenced code block containing the program."""


# Each example pairs an instruction with a program exercising one workflow:
# insertion, counting loops, spatial offsets, physics drops, fracture,
# material changes, trajectory animation, removal, and effects.
EXAMPLES = [
    ("Put a basketball on the table.", """\
table = detect_object(scene, "table")
ball = retrieve_asset(scene, "basketball")
p = sample_point_on_object(scene, table)
ball = translate_object(ball, p)
insert_object(scene, ball)"""),
    ("Drop 5 basketballs on the table.", """\
table = detect_object(scene, "table")
ball = retrieve_asset(scene, "basketball")
for i in 0..5 {
    copy = make_copy(ball)
    p = sample_point_above_object(scene, table, 0.5)
    copy = translate_object(copy, p)
    copy = rotate_object(copy, get_random_2D_rotation())
    copy = allow_physics(copy)
    insert_object(scene, copy)
}"""),
    ("Place a vase two meters in front of the camera.", """\
vase = retrieve_asset(scene, "vase")
p = get_vehicle_position(scene) + get_direction(scene, "front") * 2
vase = translate_object(vase, p)
insert_object(scene, vase)"""),
    ("Make the chair fall over.", """\
chair = detect_object(scene, "chair")
chair = allow_physics(chair)
update_object(scene, chair)"""),
    ("Shatter the box.", """\
box = detect_object(scene, "box")
box = make_break(box)"""),
    ("Make the table metallic.", """\
table = detect_object(scene, "table")
m = init_material(1, 0.1)
table = apply_material(table, m)
update_object(scene, table)"""),
    ("Fly a basketball from the table to the chair.", """\
table = detect_object(scene, "table")
chair = detect_object(scene, "chair")
ball = retrieve_asset(scene, "basketball")
a = get_object_center_position(table) + [0, 0, 0.5]
b = get_object_center_position(chair) + [0, 0, 0.5]
ball = translate_object(ball, a)
ball = set_moving_animation(ball, [a, b])
insert_object(scene, ball)"""),
    ("Remove the box.", """\
box = detect_object(scene, "box")
remove_object(scene, box)"""),
    ("Set the box on fire.", """\
box = detect_object(scene, "box")
add_fire(scene, box)"""),
    ("Drop a bowling ball onto the box and let it smash.", """\
box = detect_object(scene, "box")
box = allow_fracture(box)
box = allow_physics(box)
update_object(scene, box)
ball = retrieve_asset(scene, "bowling ball")
p = sample_point_above_object(scene, box, 1)
ball = translate_object(ball, p)
ball = allow_physics(ball)
insert_object(scene, ball)"""),
]


@dataclass
class PromptBundle:
    preamble: str
    builtin_docs: str
    examples: list  # (instruction, program) pairs
    user_template: str = "Instruction: {PROMPT}"


@dataclass
class ChatExchange:
    request: dict
    response: str = ""
    diagnostics: list = field(default_factory=list)


def builtin_reference() -> str:
    lines = []
    for name in sorted(dsl.BUILTINS):
        sig = dsl.BUILTINS[name]
        params = list(sig.params[:sig.required])
        params += [f"{p}?" for p in sig.params[sig.required:]]
        lines.append(f"{name}({', '.join(params)}) -> {sig.result}: {sig.doc}")
    return "\n".join(lines)


def default_template() -> PromptBundle:
    return PromptBundle(_PREAMBLE, builtin_reference(), list(EXAMPLES))


def build_prompt(template: PromptBundle, instruction: str) -> list:
    """Chat messages with the instruction substituted into the placeholder."""
    if not instruction.strip():
        warnings.warn("empty instruction in prompt")
    parts = [template.preamble, "Available functions:", template.builtin_docs]
    for text, program in template.examples:
        parts.append(f"Instruction: {text}\n```\n{program}\n```")
    system = "\n\n".join(parts)
    user = template.user_template.replace("{PROMPT}", instruction)
    return [{"role": "system", "content": system},
            {"role": "user", "content": user}]


def extract_code_block(response: str) -> str:
    """First fenced block, else the longest suffix of lines that parses."""
    match = _FENCE_RE.search(response)
    if match:
        return match.group(1).strip("\n")
    lines = response.split("\n")
    for start in range(len(lines)):
        candidate = "\n".join(lines[start:]).strip()
        if not candidate:
            continue
        try:
            prog = dsl.parse_program(candidate)
        except Exception:
            continue
        if prog.statements:
            return candidate
    raise NoProgramFound("response contains no program")


def generate_with_repair(endpoint, template: PromptBundle, instruction: str,
                         max_attempts: int = DEFAULT_MAX_ATTEMPTS):
    """(Program, transcripts). Re-prompts with diagnostics until valid.

    endpoint is a callable taking chat messages and returning the reply
    text; raises ExhaustedAttempts with all transcripts when every attempt
    fails to produce a valid program.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    messages = build_prompt(template, instruction)
    transcripts = []
    for _ in range(max_attempts):
        exchange = ChatExchange({"messages": list(messages)})
        transcripts.append(exchange)
        exchange.response = endpoint(messages)
        try:
            source = extract_code_block(exchange.response)
            prog = dsl.parse_program(source)
            diags = dsl.validate_program(prog)
        except NoProgramFound as exc:
            diags = [str(exc)]
            prog = None
        except Exception as exc:
            diags = [str(exc)]
            prog = None
        exchange.diagnostics = diags
        if prog is not None and not diags:
            return prog, transcripts
        feedback = ("The previous program was rejected:\n- "
                    + "\n- ".join(str(d) for d in diags)
                    + "\nReply with a corrected program in a fenced code block.")
        messages = messages + [
            {"role": "assistant", "content": exchange.response},
            {"role": "user", "content": feedback}]
    raise ExhaustedAttempts(transcripts)


def save_transcripts(transcripts, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    for i, ex in enumerate(transcripts, start=1):
        path = os.path.join(out_dir, f"attempt_{i}.txt")
        with open(path, "w") as fh:
            for msg in ex.request["messages"]:
                fh.write(f"--- {msg['role']} ---\n{msg['content']}\n")
            fh.write(f"--- response ---\n{ex.response}\n")
            if ex.diagnostics:
                fh.write("--- diagnostics ---\n")
                for d in ex.diagnostics:
                    fh.write(f"{d}\n")


STUB_CORPUS = {text: program for text, program in EXAMPLES}


def offline_stub(instruction: str) -> str:
    """Canned reply for a known instruction; network-free pipeline runs."""
    program = STUB_CORPUS.get(instruction)
    if program is None:
        raise UnknownInstruction(
            f"instruction not in the offline corpus: {instruction!r}")
    return f"Here is the program:\n```\n{program}\n```"


def stub_endpoint(messages) -> str:
    """Endpoint adapter for offline_stub: reads the last user message."""
    user = [m for m in messages if m["role"] == "user"][-1]["content"]
    instruction = user.split("Instruction:", 1)[-1].strip()
    return offline_stub(instruction)


class HttpEndpoint:
    """Chat-completion endpoint with bearer auth from an environment variable."""

    def __init__(self, url: str, model: str, temperature: float = 0.0,
                 api_key_env: str = "SCENEWEAVER_API_KEY", timeout: float = 120.0):
        self.url = url
        self.model = model
        self.temperature = temperature
        self.api_key_env = api_key_env
        self.timeout = timeout

    def __call__(self, messages) -> str:
        import requests

        key = os.environ.get(self.api_key_env, "")
        body = {"model": self.model, "messages": list(messages),
                "temperature": self.temperature}
        try:
            resp = requests.post(
                self.url, json=body, timeout=self.timeout,
                headers={"Authorization": f"Bearer {key}",
                         "Content-Type": "application/json"})
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise EndpointError(f"chat endpoint request failed: {exc}") from exc


def dump_prompt(template: PromptBundle, instruction: str) -> str:
    """Rendered prompt as one string, for inspection and logging."""
    messages = build_prompt(template, instruction)
    return json.dumps(messages, indent=2)
