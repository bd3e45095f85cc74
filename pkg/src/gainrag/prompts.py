"""Default prompt templates.

Both templates are plain ``str.format`` strings. The generation template takes
``passage`` and ``query``; the pseudo-passage template takes ``query`` only.
"""

GENERATION_TEMPLATE = (
    "{passage}\n"
    "### Instruction:\n"
    "Answer the question below concisely in a few words.\n\n"
    "### Input:\n"
    "{query}"
)

PSEUDO_PASSAGE_TEMPLATE = (
    "Please provide background for the question below in 100 words. "
    "Do not respond with anything other than background. "
    'If you do not know or are unsure, please generate "N/A" directly. '
    "Question: {query}"
)


def generation_prompt(query: str, passage: str = "", template: str = GENERATION_TEMPLATE) -> str:
    """Fill the generation template; an empty ``passage`` yields the no-context prompt."""
    return template.format(passage=passage, query=query)


def pseudo_passage_prompt(query: str, template: str = PSEUDO_PASSAGE_TEMPLATE) -> str:
    return template.format(query=query)
