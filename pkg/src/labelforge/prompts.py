"""Default prompt templates for the shipped classification strategies.

These are project-authored starting points, not tuned artifacts; swap in
your own PromptTemplate wherever a strategy accepts one.
"""

from __future__ import annotations

from .gateway import PromptTemplate

__all__ = [
    "ZERO_SHOT_EXCLUSIVE",
    "ZERO_SHOT_MULTILABEL",
    "DIRECT_SUBTOPIC",
    "ITERATIVE_STAGE_A",
    "ITERATIVE_STAGE_B",
    "default_zero_shot",
]

ZERO_SHOT_EXCLUSIVE = PromptTemplate(
    id="zero_shot_exclusive_v1",
    system="You are a careful annotator. Answer with a category name and nothing else.",
    user=(
        "Classify the document into exactly one of these categories:\n"
        "{labels}\n\n"
        "Document:\n{text}\n\n"
        "Answer with the single best category name."
    ),
    render_labels_as="names_with_descriptions",
)

ZERO_SHOT_MULTILABEL = PromptTemplate(
    id="zero_shot_multilabel_v1",
    system=(
        "You are a careful annotator. Answer with category names only, "
        "one per line."
    ),
    user=(
        "Which of these categories apply to the document? List every one "
        "that applies, one per line.\n\n"
        "Categories:\n{labels}\n\n"
        "Document:\n{text}"
    ),
    render_labels_as="names_with_descriptions",
)

DIRECT_SUBTOPIC = PromptTemplate(
    id="direct_subtopic_v1",
    system="You are a careful annotator. Answer with one topic name and nothing else.",
    user=(
        "Pick the single topic that best describes the document.\n\n"
        "Topics:\n{labels}\n\n"
        "Document:\n{text}\n\n"
        "Answer with the single best topic name."
    ),
    render_labels_as="names",
)

ITERATIVE_STAGE_A = PromptTemplate(
    id="iterative_stage_a_v1",
    system="You are a careful annotator. Answer with one option name and nothing else.",
    user=(
        "Does one of these topics describe the document? If yes, answer with "
        "that topic's name. If none fit, answer None.\n\n"
        "Topics:\n{labels}\n\n"
        "Document:\n{text}"
    ),
    render_labels_as="names",
)

ITERATIVE_STAGE_B = PromptTemplate(
    id="iterative_stage_b_v1",
    system="You are a careful annotator. Answer with one option name and nothing else.",
    user=(
        "Which of these candidate topics best describes the document? "
        "You must choose one.\n\n"
        "Candidates:\n{labels}\n\n"
        "Document:\n{text}"
    ),
    render_labels_as="names",
)


def default_zero_shot(exclusive: bool) -> PromptTemplate:
    return ZERO_SHOT_EXCLUSIVE if exclusive else ZERO_SHOT_MULTILABEL
