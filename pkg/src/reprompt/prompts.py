"""Fixed prompt texts used by the engine itself.

Every constant in this module is part of the engine's observable behavior:
the marker strings are parsed back out of model output, and the scripted
test fixtures anchor on these exact bytes. Treat any edit here as a
breaking change.
"""
from __future__ import annotations

# Marker the summarizer is told to finish with. The parser looks for the
# last occurrence and reads the focus text after it.
CONCLUSION_MARKER = "In conclusion, the main focus point should be: "

# Marker the optimizer is told to finish with. The parser looks for the
# last occurrence and reads the full improved prompt after it.
FINAL_PROMPT_MARKER = "Based on the above analysis, the improved prompt is: "


SUMMARIZER_SYSTEM_PROMPT = """You are a summarizer. You wil be provided with a chat history from an AI assistant and the user. Please choose one of the following that you believe is the case, and summarize the focus point as instructed:

a). You can summarize the main reason for failures that led to this length of discussion. You only need to summarize the reason that has appeared, but not further summarize and infer the reason behind all the reasons. Make sure you choose only one reason at a time.

b). There is a specific thought or a list of similar thoughts that is very helpful to getting the correct answer. In this case, try to generalize the thought and make it does not involve detail information like concrete numbers, but as a high-level thought of what aspect should be highlighted and focus on.

c). There is no general reason that leads to a failure. It is case-by-case errors that is inevitable.

First, do some short analysis, and then finish your conclusion in one single line, starting with: "In conclusion, the main focus point should be: "
"""

SUMMARIZER_USER_TEMPLATE = """Here is the chat history, please follow the instructions above and tell me what is the main focus point should be in the required format:

{chat_history}"""

# Header under which the prompt being optimized is included in the
# summarizer's user message, ahead of the serialized transcripts.
CURRENT_PROMPT_HEADER = "Current prompt under optimization:"

# Appended as an extra user message when the summarizer must be retried.
# Retries carry a distinct request on purpose: resending identical bytes to a
# deterministic backend would deterministically fail the same way.
SUMMARIZER_FORMAT_REMINDER = (
    "Your previous reply did not contain the required conclusion line. Please answer "
    'again and finish with one single line starting with: "In conclusion, the main '
    'focus point should be: "'
)

SUMMARIZER_DETAIL_REMINDER = (
    "Your previous conclusion included scenario-specific details such as concrete "
    "amounts or dates. Please answer again and keep the focus point general, with no "
    "concrete numbers, prices, or dates."
)


OPTIMIZER_SYSTEM_PROMPT = """You are a prompt optimizer. You will be provided with an original prompt, and a specific point that this round of optimization should focus on. Your job is to update the prompt based on the provided focus point. If the focus point is saying there is no general reason, then skip all the following step and directly output the original prompt.

In the process, do the following steps one by one:

1. List a few different options that could address the given focus point.

2. Choose the solution that you think is the most promising. Make sure the solution is focus on instruction on how to solve the problem rather than instructions on giving better problem description. The solution should not be too general and should bring in actual insights.

3. Analyze each steps in the original prompt, and see whether the new solution should be inserted before or after the current step, or it is a superset of the current step and thus the original step should be replaced.

4. Finish your output with your final prompt, in the format of: "Based on the above analysis, the improved prompt is: ".

A few common solutions for specific problems are:

- If some details are missed, a sentence by sentence check ahead of time could be helpful.

- If some requirement are not meet, then a first analysis on that constraint could be helpful, or keep satisfying that requirement in mind when giving the solution could be useful.

- If it is already a thought, then a check on whether the thought is still workable in the given scenario is very helpful. For example, if it is about a speicific requirement need to be meet, then maybe also make sure to check it in every step. However, make sure this does not limit what the feedback can provide, and using words like "specifically" to remind such a check.

During the process, make sure that you focus on optimizing the prompt for the given focus point, and do not provide any additional information.

Do not change any other part of the prompt. Only focus on the step-by-step instructions. Especially, do not change the examples and the format requirement. However, make sure you copy the detailed previous example completely to the new output instead of using place holders to indicate that it should not be changed. Do not worry about the output length caused by the examples.

Please provide a detailed and complete response without omitting any information or use "..." or "[...]" to replace any part of the prompt. Again, ensure that no information is omitted or summarized.
"""

OPTIMIZER_USER_TEMPLATE = """The original prompt is:

{prompt}

The specific point that this round of optimization should focus on is: {focus}
"""

# Appended as an extra user message when an optimizer attempt is retried
# after a rejected candidate. {reason} is a one-line rejection summary.
OPTIMIZER_RETRY_NOTE_TEMPLATE = (
    "Your previous attempt was rejected: {reason}. Please try again. Remember to "
    "change nothing outside the step-by-step instructions, copy the examples and the "
    "format requirement exactly, and finish with the required final line."
)


TEMPLATE_REPLACER_SYSTEM_PROMPT = """You are a template replacer. You will be provided with an original prompt, and an optimized prompt. Part of the new optimized prompt is a placeholder that needs to be replaced with the original prompt. Your job is to replace the placeholder with the original prompt.

One example of the placeholder is: "⟨ Original Prompt Start ⟩". You need to replace this placeholder with the original prompt.

Another exmpale is <Examples from the original prompt>. You need to replace this placeholder with the examples from the original prompt.

Output directly the new prompt with the placeholder replaced. Do not provide any additional note or analysis.
"""

TEMPLATE_REPLACER_USER_TEMPLATE = """The original prompt is:

{original}

The optimized prompt that contains placeholders is:

{candidate}
"""

REPAIR_RETRY_NOTE = (
    "Your previous output still contained a placeholder or dropped part of the "
    "original examples. Output the full prompt again with every placeholder replaced "
    "by the matching text from the original prompt, copied exactly."
)


# Step block injected into prompts that arrive without step instructions.
# The first line deliberately contains "step by step" so the injected block
# is re-detected as a step segment when the rendered prompt is parsed again.
DEFAULT_STEP_INSTRUCTIONS = (
    "Please solve the task step by step:\n"
    "1. First, briefly analyze the problem and identify the key requirements and constraints.\n"
    "2. Then, produce the solution to the task.\n"
)


# Reflection feedback. The generator stops the episode when the reflection
# contains the finish marker, so the instruction and the marker must agree.
DEFAULT_FINISH_MARKER = "LGTM"

REFLECTION_SYSTEM_PROMPT = (
    "You are a reflection assistant. You will be shown the conversation so far "
    "between a user and an AI assistant that is solving a task. Review the latest "
    "answer from the assistant, point out the most important problem with it, and "
    "say what the assistant should pay attention to in its next attempt. Do not "
    "provide a full solution yourself. If the latest answer already satisfies every "
    'requirement of the task, reply with exactly "LGTM".'
)

REFLECTION_USER_TEMPLATE = """Here is the conversation so far:

{transcript}

Please provide your reflection."""
