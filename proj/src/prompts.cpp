#include "hymem/prompts.hpp"

#include "hymem/errors.hpp"

namespace hymem::prompts {

namespace {

constexpr std::string_view kSummarySystem =
    R"(Your task is to extract all key information from the conversation and summarize each piece into a concise sentence. These sentences will serve as the memory content for subsequent agent responses.

The final output format should be:

{ "keywords": ["Key information 1", "Key information 2", "Key information 3", ...] }

Important instructions: 

All key information in the original conversation must be retained, including details such as time, location, persons involved, and significant events, to prevent errors in future responses due to missing details.

Key information should appropriately summarize the valuable content present in the original dialogue. To improve efficiency, all unnecessary dialogue elements (such as greetings, pleasantries, small talk, or casual remarks) must be excluded from the key information. 

Summaries should be concise and minimize character usage wherever possible. Whenever possible, integrate multiple related pieces of information into a single key sentence to increase information density. Avoid fragmenting key information excessively, as this could lead to unnecessary character usage.)";

constexpr std::string_view kSummaryUser = R"(Dialogue time: {time}
Conversation:
{context})";

constexpr std::string_view kSegmentationSystem =
    R"(You split a conversation into discrete events based on the topics being discussed. Each turn is prefixed with its index in square brackets.

Return the indices of the turns at which a new topic begins, in increasing order. Do not include 0. If the whole conversation is about one topic, return an empty list.

The required output format is: { "boundaries": [12, 30] }

Note: Return output only in JSON format. Do not provide any other form of output.)";

constexpr std::string_view kSegmentationUser = R"(Dialogue turns:
{context})";

constexpr std::string_view kLightSystem =
    R"(You are a memory-based question answering assistant. You will receive a question along with a summary of related memory.

Your main responsibilities are as follows:

Based on the provided memory summary, determine whether the current question can be answered.

If the memory summary does not match the question, is incomplete, vague or ambiguous, is irrelevant, or if you are unsure whether you can answer, you must treat it as unanswerable. Note: Use strict criteria to avoid hallucinations and incorrect responses. In these cases, set the "finished" field to 2. More precise retrieval methods will be used later to provide more complete memory.

If a standard or golden answer to the question is clearly present in the memory summary, generate the answer in the "answer" field and set "finished" to 0. The answer must be complete and specific. For example, for time-related questions, to avoid ambiguity, clearly specify the reference point of any relative time expressions. If the answer is "last year", the correct format should be: "The current year is 2022, so the answer is last year."

The required output format is: {"finished":0, "answer": "..."}

Note: Return output only in JSON format. Do not provide any other form of output.)";

constexpr std::string_view kLightUser = R"(Question: {question}

Memory summary:
{context}

Memory pool:
{pool})";

constexpr std::string_view kRetrieverSystem =
    R"(You are a text retriever.

You are given a question and a set of memory content indices. Each index is a brief summary of the key information in the corresponding memory content.

Your task is to, based on the given question, identify the ids of the memory indices that are most likely to provide context for answering the question.

Example:

Question: Where is Alice's home?

Indices:

id:0, dialogue time:13 October, 2022, Alice's two children

id:1, dialogue time:13 October, 2023, Alice's husband

id:2, dialogue time:23 October, 2022, Jack's job

id:3, dialogue time:13 October, 2022, Charity organization

id:4, dialogue time:31 October, 2022, Alice moved from her hometown

id:5, dialogue time:31 October, 2022, Alice's life in her hometown

Result:

{ "keywords_list": [4,5] })";

constexpr std::string_view kRetrieverUser = R"(Question: {question}

Indices:

{indices}

Result:)";

constexpr std::string_view kDeepSystem =
    R"(You are a memory-based question-answering assistant. You will receive a question along with memories for answering it.

Your main responsibilities are as follows:

Please note that answers to questions are not always fixed. You should list all possible answers and strive to ensure the completeness of the information. For example, regarding time-related questions, to avoid ambiguity, explicitly specify the reference point for any relative time expressions. For instance, if the answer is "last year," the correct format should be: "The current year is 2022, and the answer is last year."
At the same time, not all questions have relevant memories, such as open-ended questions. Even if the memory information is incomplete, you can boldly infer the most likely answer based on the existing memories, even if the answer may be incomplete or not entirely rigorous. Avoid refusing to answer.

The required output format is: { "answer": "..." }

Note: Only return your output in JSON format, and do not provide any other form of output. )";

constexpr std::string_view kDeepUser = R"(Question: {question}

Memories:
{context}

Memory pool:
{pool})";

constexpr std::string_view kReflectionSystem =
    R"(Your primary responsibility is to evaluate whether the current answer meets the standard based on the given question and the model's response.

If the answer is irrelevant to the question or contradicts the intent of the question, it should be judged as not meeting the standard. In such cases, set the finished field to 0, and rewrite the question by strengthening it based on what is missing in the answer, so that it can be used for further retrieval.

The newly generated question should be output in the new_question field. If the answer is generally complete and well-reasoned, judge it as meeting the requirements and set the finished field to 1.
Here is an example output: { "finished": 0, "new_question": "..." })";

constexpr std::string_view kReflectionUser = R"(Question: {question}

Model response: {answer})";

constexpr std::string_view kJudgeSystem =
    R"(You are an answer scoring expert.
You will receive the following information: (1) a question, (2) a standard (reference answer), (3) an answer generated by a memory-based LLM. Your task is to label the generated answer as CORRECT or WRONG.
Important notes:
Be as lenient as possible when scoring: the standard answer is typically a concise short sentence, while the generated answer may be longer and more detailed. As long as the generated answer aligns with the standard answer, it should be marked as CORRECT. Do not be overly nitpicky.
For time-related questions, the standard answer is a specific date, month, or year. The generated answer may be longer or use relative time expressions (e.g., "last Tuesday" or "next month"). Please be lenient in scoring—if the generated answer refers to the same time period as the standard answer, mark it as CORRECT.
Finally, provide CORRECT or WRONG.
Do not include both CORRECT and WRONG in your response, as this will cause errors in the evaluation script.
Simply return the label in JSON format with the key "label".)";

constexpr std::string_view kJudgeUser = R"(Now it's time for the formal question:
Question: {question}
Gold answer: {gold_answer}
Generated answer: {generated_answer})";

}  // namespace

const Template& summary() {
  static const Template t{"summary", kSummarySystem, kSummaryUser};
  return t;
}
const Template& segmentation() {
  static const Template t{"segmentation", kSegmentationSystem, kSegmentationUser};
  return t;
}
const Template& light_generator() {
  static const Template t{"light_generator", kLightSystem, kLightUser};
  return t;
}
const Template& llm_retriever() {
  static const Template t{"llm_retriever", kRetrieverSystem, kRetrieverUser};
  return t;
}
const Template& deep_generator() {
  static const Template t{"deep_generator", kDeepSystem, kDeepUser};
  return t;
}
const Template& reflection() {
  static const Template t{"reflection", kReflectionSystem, kReflectionUser};
  return t;
}
const Template& judge() {
  static const Template t{"judge", kJudgeSystem, kJudgeUser};
  return t;
}

std::string fill(std::string_view tmpl,
                 const std::vector<std::pair<std::string_view, std::string>>& values) {
  std::vector<bool> used(values.size(), false);
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      bool replaced = false;
      for (std::size_t v = 0; v < values.size(); ++v) {
        const auto& name = values[v].first;
        if (tmpl.substr(i + 1).starts_with(name) && i + 1 + name.size() < tmpl.size() &&
            tmpl[i + 1 + name.size()] == '}') {
          out += values[v].second;
          i += name.size() + 2;
          used[v] = true;
          replaced = true;
          break;
        }
      }
      if (replaced) continue;
    }
    out.push_back(tmpl[i]);
    ++i;
  }
  for (std::size_t v = 0; v < values.size(); ++v) {
    if (!used[v]) {
      throw ContractViolation("prompt template has no {" + std::string(values[v].first) + "} slot");
    }
  }
  return out;
}

}  // namespace hymem::prompts
