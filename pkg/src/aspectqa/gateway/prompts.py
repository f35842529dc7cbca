from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources
from typing import Dict, List, Mapping, Tuple

import yaml

EXAMPLES_SLOT = "examples"


class RenderError(KeyError):
    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    few_shot_examples: Tuple[Tuple[str, str], ...] = ()
    system: str = ""
    example_header: str = "Example {n}"

    @property
    def placeholders(self) -> List[str]:
        names = []
        for _, fname, _, _ in string.Formatter().parse(self.body):
            if fname is not None and fname != EXAMPLES_SLOT and fname not in names:
                names.append(fname)
        return names

    def examples_block(self) -> str:
        blocks = []
        for n, (inp, out) in enumerate(self.few_shot_examples, start=1):
            header = self.example_header.format(n=n)
            blocks.append(f"######################\n{header}\n######################\n{inp.rstrip()}\n\nOutput:\n{out.rstrip()}")
        return "\n\n".join(blocks)


def render(template: PromptTemplate, bindings: Mapping[str, object]) -> str:
    """Fill the template's placeholders; few-shot blocks go in the examples
    slot, or in front of the body when the body has no slot."""
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise RenderError(f"template {template.name!r}: unbound placeholder(s): {', '.join(missing)}")
    values: Dict[str, object] = {p: bindings[p] for p in template.placeholders}
    examples = template.examples_block()
    has_slot = any(f == EXAMPLES_SLOT for _, f, _, _ in string.Formatter().parse(template.body))
    if has_slot:
        values[EXAMPLES_SLOT] = examples
        return template.body.format_map(values)
    body = template.body.format_map(values)
    return f"{examples}\n\n{body}" if examples else body


def template_from_dict(data: Mapping) -> PromptTemplate:
    shots = tuple((s["input"], s["output"]) for s in data.get("few_shot_examples") or [])
    return PromptTemplate(
        name=data["name"],
        body=data["body"],
        few_shot_examples=shots,
        system=data.get("system", ""),
        example_header=data.get("example_header", "Example {n}"),
    )


_CACHE: Dict[str, PromptTemplate] = {}


def load_template(name: str) -> PromptTemplate:
    """Load one of the bundled templates from ``aspectqa/prompts/<name>.yaml``."""
    if name not in _CACHE:
        ref = resources.files("aspectqa").joinpath("prompts", f"{name}.yaml")
        _CACHE[name] = template_from_dict(yaml.safe_load(ref.read_text(encoding="utf-8")))
    return _CACHE[name]


def load_template_file(path) -> PromptTemplate:
    with open(path, "r", encoding="utf-8") as f:
        return template_from_dict(yaml.safe_load(f))
