"""The bundled toy corpus: 20 skills with job, sentence and alternative graphs."""

from __future__ import annotations

import os
from dataclasses import dataclass

from .corpus import BipartiteGraph, TaskSpec, TextSpace, load_graph, load_space, load_task

TOY_DIR = os.path.join(os.path.dirname(__file__), "data", "toy")


@dataclass
class ToyCorpus:
    skills: TextSpace
    jobs: TextSpace
    sentences: TextSpace
    alternatives: TextSpace
    graphs: dict[str, BipartiteGraph]
    validation: list[TaskSpec]


def toy_path(name: str) -> str:
    return os.path.join(TOY_DIR, name)


def load_toy() -> ToyCorpus:
    skills = load_space(toy_path("skills.jsonl"))
    jobs = load_space(toy_path("jobs.jsonl"))
    sentences = load_space(toy_path("sentences.jsonl"))
    alternatives = load_space(toy_path("alternatives.jsonl"))
    graphs = {
        "job": load_graph(toy_path("skill_job.tsv"), skills, jobs),
        "vacancy": load_graph(toy_path("skill_sentence.tsv"), skills, sentences),
        "alternative": load_graph(toy_path("skill_alternative.tsv"), skills, alternatives),
    }
    spaces = {os.path.normpath(toy_path("skills.jsonl")): skills}
    validation = [load_task(toy_path("job2skill_val.json"), spaces)]
    return ToyCorpus(skills, jobs, sentences, alternatives, graphs, validation)
