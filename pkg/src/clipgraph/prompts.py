"""Prompt templates for every model call the engine makes.

The first three (clip description, task/keyword analysis, subquery
generation) are reproduced character for character from the reference
prompts; the rest are this package's own.
"""
from __future__ import annotations

from typing import Mapping

EXTRACTION_PROMPT = """Please analyze the given video and extract key information in a structured JSON format in English. Identify and describe:

Entities: List all distinct objects, people, animals, or other significant elements present in the video.

Actions: If the entities are interacting, describe their actions and relationships in a structured manner.

Scenes: Identify and describe the locations, environments, or contexts where the events occur.
If the video is filmed from a first-person point of view, please also describe "subject" as "me" and actions or interactions from this person.

Ensure the output strictly follows the JSON format below:

{
    "entities": [{"entity name": "", "description": ""}],
    "actions": [{"entity name": "action description"}],
    "scenes": [{"location": ""}]
}

The "entity name" in actions should belong to "entity name" in entities.

Each section should be detailed but concise, capturing all relevant interactions and contextual elements from the video. Avoid unnecessary text outside the JSON output."""

EXTRACTION_SUBTITLES = "\n\nSubtitles spoken during this video segment:\n{subtitles}"

ANALYSIS_PROMPT = """Given a question of a long video and potential candidates:

Question: {query}

Candidates: {candidates}

You need to retrieve the relevant video segments to answer the question. Note that you do not need to see the video. But based on the question please think step by step what are the important things for retrieval.

[keywords] Please identify the information, like entities, scene, action from the question that is important to retrieve the segments for further answer the question. Do not include the candidates in the keywords.

[candidates_necessary] Do you think the information in the candidates is necessary for retrieval? Answer yes or no.

[multiple] Do you think it needs to aggregate the information from multiple segments to answer the question? ONLY answer yes or no.

[time] Please identify if it can tell the question is asking which part of the video. Answer begin, end or none.

[tool] Do you think it needs additional step for answering the question, please select from [object counting, action counting, order, none].

[global] Can this question be answered based on the overall understanding of the whole video? (e.g., "What is the main topic of the video?" or "What is the main content of the video?")

Please output the final answer in json format, for example:

{{"multiple": "no", "keywords": ["man in black"], "time": "begin", "tool": none, "candidates_necessary": "yes", "global": "yes"}}"""

SUBQUERY_PROMPT = """Given a question of a long video and potential candidates:

Question: {query}

Candidates: {candidates}

Given a multiple-choice question about a video, break it down into several sub-questions that analyze the key elements required to answer it step by step.

First, identify the key subject or event in the question (e.g., an object, an animal, an action, or a location).
Form yes/no or counting questions to verify the presence of the subject or event in the video (e.g., "Does the video show [subject/event]?").
Ensure the sub-questions cover all necessary aspects to reach the correct answer.

==important==
Please give me the answer in JSON format.
Do not include references to specific time positions in the video when generating questions (e.g., "at the beginning," "in the middle," or "at the end")
Do not go through all the numbers in the candidates for counting quesitons."""

SUBQUERY_KEYWORDS = "\n\nKeywords extracted from the question: {keywords}"

VERIFY_BINARY_PROMPT = """Watch the video clip and answer the question with a single word, yes or no.

Question: {subquery}"""

VERIFY_NUMERIC_PROMPT = """Watch the video clip and answer the question with a single non-negative integer.

Question: {subquery}"""

AGGREGATE_PROMPT = """Below are verified observations from several clips of one video. Each row gives a clip, a question that was checked on that clip, and the answer.

{table}

{totals}Summarize all information in these observations that helps answer the question "{question}". Refer to clips by their index and keep their temporal order."""

CONFIDENCE_PROMPT = """Watch the video clip and rate how relevant it is for answering the question below, from 0 (irrelevant) to 10 (contains the answer). Reply with the number only.

Question: {question}"""

ANSWER_INSTRUCTION_MCQ = "Answer with the option letter from the given choices directly."
ANSWER_INSTRUCTION_OPEN = "Answer the question in a short free-text response."


def format_candidates(options: Mapping[str, str] | None) -> str:
    if not options:
        return "none"
    return " ".join(f"({letter}) {text}" for letter, text in options.items())


def extraction_prompt(subtitle_text: str = "") -> str:
    if subtitle_text.strip():
        return EXTRACTION_PROMPT + EXTRACTION_SUBTITLES.format(subtitles=subtitle_text.strip())
    return EXTRACTION_PROMPT


def analysis_prompt(question: str, options: Mapping[str, str] | None) -> str:
    return ANALYSIS_PROMPT.format(query=question, candidates=format_candidates(options))


def subquery_prompt(question: str, options: Mapping[str, str] | None, keywords: list[str]) -> str:
    text = SUBQUERY_PROMPT.format(query=question, candidates=format_candidates(options))
    if keywords:
        text += SUBQUERY_KEYWORDS.format(keywords=", ".join(keywords))
    return text
