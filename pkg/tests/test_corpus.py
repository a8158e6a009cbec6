import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from workrank.corpus import (BipartiteGraph, CorpusError, RawVacancyRecord, TaskSpec, TextItem, TextSpace,
                             dedup_merge_jobs, load_graph, load_qrels, load_space, load_task, normalize_title,
                             serialize_space, validate_graph)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def space_of(name, role, *ids):
    return TextSpace(name, role, tuple(TextItem(i, f"text {i}") for i in ids))


# --- load_space -------------------------------------------------------------


def test_load_space_keeps_file_order(tmp_path):
    p = write_lines(tmp_path / "s.jsonl", ['{"id": "b", "text": "second"}', '{"id": "a", "text": "first"}'])
    space = load_space(p, role="skill")
    assert len(space) == 2
    assert space.ids == ["b", "a"]
    assert space.text("a") == "first"


def test_duplicate_id_names_id_and_both_lines(tmp_path):
    p = write_lines(tmp_path / "s.jsonl", [
        '{"id": "s1", "text": "x"}', '{"id": "s2", "text": "y"}', '{"id": "s1", "text": "z"}'])
    with pytest.raises(CorpusError, match=r"'s1'.*lines 1 and 3"):
        load_space(p, role="skill")


def test_malformed_line_reports_line_number(tmp_path):
    p = write_lines(tmp_path / "s.jsonl", ['{"id": "s1", "text": "x"}', "{not json"])
    with pytest.raises(CorpusError, match=":2:"):
        load_space(p, role="skill")


def test_empty_file_is_empty_space(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert len(load_space(p, role="generic")) == 0


def test_header_line_sets_name_and_role(tmp_path):
    p = write_lines(tmp_path / "s.jsonl", ['#!{"name": "esco", "role": "skill"}', '{"id": "a", "text": "t"}'])
    space = load_space(p)
    assert (space.name, space.role) == ("esco", "skill")


def test_sidecar_manifest(tmp_path):
    p = write_lines(tmp_path / "s.jsonl", ['{"id": "a", "text": "t"}'])
    (tmp_path / "s.jsonl.meta.json").write_text(json.dumps({"name": "titles", "role": "job"}))
    space = load_space(p)
    assert (space.name, space.role) == ("titles", "job")


def test_missing_role_rejected(tmp_path):
    p = write_lines(tmp_path / "s.jsonl", ['{"id": "a", "text": "t"}'])
    with pytest.raises(CorpusError, match="role"):
        load_space(p)


item_ids = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=8)
item_texts = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(item_ids, item_texts), max_size=12, unique_by=lambda t: t[0]))
def test_serialize_load_roundtrip(tmp_path_factory, records):
    space = TextSpace("sp", "generic", tuple(TextItem(i, t) for i, t in records))
    path = tmp_path_factory.mktemp("rt") / "space.jsonl"
    serialize_space(space, path)
    assert load_space(path) == space


# --- graphs -----------------------------------------------------------------


@pytest.fixture
def spaces():
    return space_of("skills", "skill", "s1", "s2", "s3"), space_of("jobs", "job", "j1", "j2")


def test_load_graph_dedups(tmp_path, spaces):
    p = write_lines(tmp_path / "g.tsv", ["# comment", "s1\tj1", "s1\tj1", "s2\tj2"])
    g = load_graph(p, *spaces)
    assert len(g) == 2
    assert g.edges == (("s1", "j1"), ("s2", "j2"))


def test_dangling_target_rejected(tmp_path, spaces):
    p = write_lines(tmp_path / "g.tsv", ["s1\tj9"])
    with pytest.raises(CorpusError, match="'j9'"):
        load_graph(p, *spaces)


def test_adjacency_by_hand(tmp_path, spaces):
    p = write_lines(tmp_path / "g.tsv", ["s1\tj1", "s1\tj2", "s2\tj1"])
    g = load_graph(p, *spaces)
    assert set(g.targets_of("s1")) == {"j1", "j2"}
    assert g.degree("j1") == 2
    assert g.degree("j2") == 1
    assert g.queries_of("j1") == ["s1", "s2"]


def test_validate_reports_isolated_query(spaces):
    g = BipartiteGraph.from_edges(*spaces, [("s1", "j1"), ("s2", "j1")])
    report = validate_graph(g)
    assert report.isolated_queries == ["s3"]
    assert not report.empty


def test_validate_clean_graph_is_empty(spaces):
    g = BipartiteGraph.from_edges(*spaces, [("s1", "j1"), ("s2", "j1"), ("s3", "j2")])
    assert validate_graph(g).empty


def test_validate_categorizes_multiple_violations(spaces):
    g = BipartiteGraph(spaces[0], spaces[1], (("s1", "j1"), ("s1", "j1"), ("s2", "jX"), ("s3", "j2")))
    report = validate_graph(g)
    assert report.duplicate_edges == [("s1", "j1")]
    assert report.dangling_ids == ["jX"]
    assert report.isolated_queries == []


# --- tasks ------------------------------------------------------------------


def test_task_manifest(tmp_path):
    serialize_space(space_of("q", "job", "j1", "j2"), tmp_path / "q.jsonl")
    serialize_space(space_of("t", "skill", "s1", "s2"), tmp_path / "t.jsonl")
    write_lines(tmp_path / "qrels.tsv", ["j1\ts1", "j1\ts2", "j2\ts2"])
    (tmp_path / "task.json").write_text(json.dumps({
        "name": "J2S", "query_space": "q.jsonl", "target_space": "t.jsonl", "qrels": "qrels.tsv",
        "label_type": "multi", "exclude_self": False, "task_group": "J2S"}))
    task = load_task(tmp_path / "task.json")
    assert task.qrels == {"j1": frozenset({"s1", "s2"}), "j2": frozenset({"s2"})}
    assert task.query_ids == ["j1", "j2"]
    inv = task.inverted()
    assert inv.qrels == {"s1": frozenset({"j1"}), "s2": frozenset({"j1", "j2"})}


def test_single_label_task_requires_one_target():
    q, t = space_of("q", "generic", "a"), space_of("t", "generic", "x", "y")
    with pytest.raises(CorpusError, match="single-label"):
        TaskSpec("T", q, t, {"a": frozenset({"x", "y"})}, label_type="one")


def test_qrels_unknown_target_rejected():
    q, t = space_of("q", "generic", "a"), space_of("t", "generic", "x")
    with pytest.raises(CorpusError, match="'z'"):
        TaskSpec("T", q, t, {"a": frozenset({"z"})})


def test_load_qrels(tmp_path):
    p = write_lines(tmp_path / "q.tsv", ["a\tx", "a\ty", "b\tx"])
    assert load_qrels(p) == {"a": frozenset({"x", "y"}), "b": frozenset({"x"})}


# --- job-title merging ------------------------------------------------------


def rec(title, *skills):
    return RawVacancyRecord(title, tuple(skills))


def test_case_agnostic_merge():
    out = dedup_merge_jobs([rec("Data Scientist", ("k1", 0.9)), rec("data scientist", ("k1", 0.7))])
    assert len(out) == 1
    assert out[0].skills == (("k1", pytest.approx(0.8)),)


def test_majority_vote_by_hand():
    out = dedup_merge_jobs([
        rec("Nurse", ("k", 0.9), ("rare", 0.99)),
        rec("nurse", ("k", 0.5)),
        rec("NURSE", ("other", 0.4)),
    ])
    assert out[0].skill_ids == ["k"]  # 2 of 3 keeps k; 1 of 3 drops rare and other


def test_two_duplicate_tie_keeps_skill():
    out = dedup_merge_jobs([rec("cook", ("a", 0.3)), rec("Cook", ("b", 0.6))])
    assert out[0].skill_ids == ["b", "a"]


def test_top_200_cutoff_by_mean_confidence():
    skills = [(f"k{i:03d}", (i + 1) / 250) for i in range(250)]
    out = dedup_merge_jobs([rec("clerk", *skills)])
    assert len(out[0].skills) == 200
    assert set(out[0].skill_ids) == {f"k{i:03d}" for i in range(50, 250)}
    assert out[0].skill_ids[0] == "k249"


def test_confidence_ties_by_skill_id():
    out = dedup_merge_jobs([rec("x", ("b", 0.5), ("a", 0.5), ("c", 0.9))])
    assert out[0].skill_ids == ["c", "a", "b"]


def test_canonical_title_most_frequent_casing_then_first_seen():
    out = dedup_merge_jobs([rec("data  Analyst"), rec("Data Analyst"), rec("Data Analyst")])
    assert out[0].title == "Data Analyst"
    out = dedup_merge_jobs([rec("Chef"), rec("chef")])
    assert out[0].title == "Chef"


def test_empty_input():
    assert dedup_merge_jobs([]) == []


def test_confidence_bounds():
    with pytest.raises(CorpusError):
        RawVacancyRecord("x", (("k", 1.5),))


titles = st.sampled_from(["Data Scientist", "data scientist", "DATA  scientist", "Nurse", "nurse ", "Chef"])
skill_lists = st.lists(st.tuples(st.sampled_from(["a", "b", "c", "d", "e"]),
                                 st.floats(0, 1, allow_nan=False)), max_size=5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.builds(lambda t, s: RawVacancyRecord(t, tuple(s)), titles, skill_lists), max_size=10),
       st.integers(1, 5))
def test_merge_idempotent_and_titles_unique(records, cap):
    once = dedup_merge_jobs(records, cap)
    twice = dedup_merge_jobs([m.as_record() for m in once], cap)
    assert twice == once
    folded = [normalize_title(m.title) for m in once]
    assert len(folded) == len(set(folded))
