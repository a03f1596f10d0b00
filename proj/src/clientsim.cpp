#include "chatassist/clientsim.hpp"

#include <algorithm>
#include <fstream>

#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"

namespace chatassist {

using json = nlohmann::json;

namespace {

bool contains_any(const std::string& haystack, const std::vector<std::string>& needles) {
  for (const auto& n : needles) {
    if (!n.empty() && haystack.find(n) != std::string::npos) return true;
  }
  return false;
}

std::string render_value(std::string value) {
  std::replace(value.begin(), value.end(), '_', ' ');
  return value;
}

std::string fill(const std::string& tmpl, const std::string& value) {
  std::string out = tmpl;
  const std::string key = "{value}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos)) {
    out.replace(pos, key.size(), value);
    pos += value.size();
  }
  if (!out.empty() && tmpl.rfind(key, 0) == 0) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

template <class T>
const T& pick(const std::vector<T>& options, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, options.size() - 1);
  return options[d(rng)];
}

DisclosurePolicy policy_from_string(std::string_view text) {
  if (text == "volunteers") return DisclosurePolicy::volunteers;
  if (text == "answers_if_asked") return DisclosurePolicy::answers_if_asked;
  if (text == "evasive_once") return DisclosurePolicy::evasive_once;
  throw Error(ErrorCode::kParseError, "unknown disclosure policy '" + std::string(text) + "'");
}

std::vector<std::string> string_list(const json& doc, const char* key) {
  std::vector<std::string> out;
  if (!doc.contains(key)) return out;
  for (const auto& v : doc.at(key)) out.push_back(v.get<std::string>());
  return out;
}

}  // namespace

Domain Domain::from_json(const json& doc, AdviceCatalog catalog) {
  Domain d;
  try {
    d.name_ = doc.at("name").get<std::string>();
    d.inquiry_label_ = doc.value("inquiry_label", std::string("inquiry"));
    const json phrases = doc.value("phrases", json::object());
    for (const auto& [key, value] : phrases.items()) {
      if (value.is_string()) {
        d.phrases_[key] = value.get<std::string>();
      } else {
        // list phrases are stored joined by '\n' and split on use
        std::string joined;
        for (const auto& v : value) {
          if (!joined.empty()) joined += '\n';
          joined += v.get<std::string>();
        }
        d.phrases_[key] = joined;
      }
    }
    for (const auto& a : doc.at("attributes")) {
      AttributeSpec spec;
      spec.name = a.at("name").get<std::string>();
      spec.label = a.value("label", spec.name);
      for (const auto& c : string_list(a, "cues")) spec.cues.push_back(to_lower(c));
      spec.answers = string_list(a, "answers");
      spec.vague_answer = a.value("vague_answer", std::string("Why do you ask?"));
      d.phrases_["unknown:" + spec.name] = a.value("unknown_answer", std::string("I'm not sure."));
      spec.values = string_list(a, "values");
      if (spec.answers.empty()) spec.answers.push_back("{value}.");
      d.attributes_.push_back(std::move(spec));
    }
    for (const auto& o : doc.at("objectives")) {
      ObjectiveSpec spec;
      spec.id = o.at("id").get<std::string>();
      spec.description = o.value("description", spec.id);
      spec.questions = string_list(o, "questions");
      spec.requires_labels = string_list(o, "requires");
      spec.resolution = o.at("resolution").get<std::string>();
      spec.marker = to_lower(o.at("marker").get<std::string>());
      for (const auto& r : o.value("resources", json::array())) {
        ResourceRule rule;
        rule.item = r.at("item").get<std::string>();
        const json when = r.value("when", json::object());
        for (const auto& [label, value] : when.items()) {
          rule.when[label] = value.get<std::string>();
        }
        spec.resources.push_back(std::move(rule));
      }
      if (spec.questions.empty()) spec.questions.push_back("Can you help me " + spec.description + "?");
      d.objectives_.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("domain: ") + e.what());
  }
  d.catalog_ = std::move(catalog);
  for (const auto& o : d.objectives_) {
    for (const auto& label : o.requires_labels) {
      if (!d.attribute(label)) {
        throw Error(ErrorCode::kUnknownAttribute, "objective " + o.id + " requires " + label);
      }
    }
    if (!d.catalog_.find(o.resolution)) {
      throw Error(ErrorCode::kUnresolvableObjective, o.id + " -> " + o.resolution);
    }
    for (const auto& r : o.resources) d.catalog_.at(r.item);
  }
  return d;
}

Domain Domain::load(const std::filesystem::path& domain_file,
                    const std::filesystem::path& catalog_file) {
  std::ifstream in(domain_file);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open domain " + domain_file.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::kParseError, "domain is not JSON");
  return from_json(doc, AdviceCatalog::load(catalog_file));
}

const AttributeSpec* Domain::attribute(std::string_view name) const {
  for (const auto& a : attributes_) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const ObjectiveSpec* Domain::objective(std::string_view id) const {
  for (const auto& o : objectives_) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

const AdviceItem* Domain::ask_item(std::string_view label) const {
  for (const auto& item : catalog_.items()) {
    if (item.type == AdviceType::topic_acquisition && item.action_ref == label) return &item;
  }
  return nullptr;
}

const std::string& Domain::phrase(std::string_view key) const {
  static const std::string empty;
  auto it = phrases_.find(key);
  return it == phrases_.end() ? empty : it->second;
}

TagSchema domain_schema(const Domain& domain) {
  std::vector<std::string> labels{domain.inquiry_label()};
  for (const auto& a : domain.attributes()) labels.push_back(a.label);
  std::sort(labels.begin(), labels.end(), collate_less);
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  TagSchema schema;
  schema.labels = LabelList(labels);
  for (const auto& a : domain.attributes()) {
    for (const auto& v : a.values) schema.vocab.add(a.label, v);
  }
  for (const auto& o : domain.objectives()) schema.vocab.add(domain.inquiry_label(), o.id);
  return schema;
}

std::string_view to_string(DisclosurePolicy policy) {
  switch (policy) {
    case DisclosurePolicy::volunteers: return "volunteers";
    case DisclosurePolicy::answers_if_asked: return "answers_if_asked";
    case DisclosurePolicy::evasive_once: return "evasive_once";
  }
  return "answers_if_asked";
}

DisclosurePolicy Storyboard::policy(const std::string& attribute) const {
  auto it = disclosure.find(attribute);
  return it == disclosure.end() ? DisclosurePolicy::answers_if_asked : it->second;
}

json Storyboard::to_json() const {
  json policies = json::object();
  for (const auto& [attr, p] : disclosure) policies[attr] = to_string(p);
  return json{{"name", name},
              {"persona", persona},
              {"objectives", objectives},
              {"disclosure_policy", policies}};
}

Storyboard load_storyboard(const json& doc, const Domain& domain) {
  if (!doc.is_object() || !doc.contains("persona") || !doc.contains("objectives") ||
      !doc.at("persona").is_object() || !doc.at("objectives").is_array()) {
    throw Error(ErrorCode::kParseError, "storyboard needs persona{} and objectives[]");
  }
  Storyboard story;
  story.name = doc.value("name", std::string());
  for (const auto& [attr, value] : doc.at("persona").items()) {
    if (!domain.attribute(attr)) throw Error(ErrorCode::kUnknownAttribute, attr);
    if (value.is_string()) {
      story.persona[attr] = value.get<std::string>();
    } else if (value.is_number() || value.is_boolean()) {
      story.persona[attr] = value.dump();
    } else {
      throw Error(ErrorCode::kParseError, "persona value for " + attr);
    }
  }
  for (const auto& entry : doc.at("objectives")) {
    if (!entry.is_string()) throw Error(ErrorCode::kParseError, "objective must be a string");
    const std::string wanted = to_lower(trim(entry.get<std::string>()));
    const ObjectiveSpec* found = nullptr;
    for (const auto& o : domain.objectives()) {
      if (o.id == wanted || to_lower(o.description) == wanted) found = &o;
    }
    if (!found || !domain.catalog().find(found->resolution)) {
      throw Error(ErrorCode::kUnresolvableObjective, entry.get<std::string>());
    }
    story.objectives.push_back(found->id);
  }
  if (story.objectives.empty()) throw Error(ErrorCode::kParseError, "storyboard without objectives");
  if (doc.contains("disclosure_policy")) {
    const json& policies = doc.at("disclosure_policy");
    if (!policies.is_object()) throw Error(ErrorCode::kParseError, "disclosure_policy");
    for (const auto& [attr, value] : policies.items()) {
      if (!domain.attribute(attr)) throw Error(ErrorCode::kUnknownAttribute, attr);
      if (!value.is_string()) throw Error(ErrorCode::kParseError, "policy for " + attr);
      story.disclosure[attr] = policy_from_string(value.get<std::string>());
    }
  }
  return story;
}

Storyboard load_storyboard_file(const std::filesystem::path& path, const Domain& domain) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::kParseError, path.filename().string());
  Storyboard story = load_storyboard(doc, domain);
  if (story.name.empty()) story.name = path.stem().string();
  return story;
}

std::vector<Storyboard> load_storyboard_library(const std::filesystem::path& dir,
                                                const Domain& domain) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".storyboard" || ext == ".json")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<Storyboard> out;
  for (const auto& f : files) out.push_back(load_storyboard_file(f, domain));
  return out;
}

Storyboard random_storyboard(const Domain& domain, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Storyboard story;
  story.name = "random-" + hex64(seed).substr(8);
  for (const auto& a : domain.attributes()) {
    if (a.values.empty() || u(rng) >= 0.85) continue;
    story.persona[a.name] = pick(a.values, rng);
    const double p = u(rng);
    if (p < 0.15) {
      story.disclosure[a.name] = DisclosurePolicy::volunteers;
    } else if (p < 0.30) {
      story.disclosure[a.name] = DisclosurePolicy::evasive_once;
    }
  }
  std::vector<std::string> ids;
  for (const auto& o : domain.objectives()) ids.push_back(o.id);
  std::shuffle(ids.begin(), ids.end(), rng);
  const double k = u(rng);
  const std::size_t count = std::min<std::size_t>(ids.size(), k < 0.6 ? 1 : (k < 0.9 ? 2 : 3));
  story.objectives.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(count));
  return story;
}

BotState BotState::start(Storyboard story, std::uint64_t seed, const BotConfig& config) {
  BotState s;
  s.story = std::move(story);
  s.rng.seed(seed);
  s.patience = std::max(0, config.patience);
  s.p_ask = config.p_ask;
  return s;
}

namespace {

std::vector<std::string> split_lines(const std::string& joined) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= joined.size()) {
    auto end = joined.find('\n', start);
    if (end == std::string::npos) end = joined.size();
    if (end > start) out.push_back(joined.substr(start, end - start));
    start = end + 1;
  }
  if (out.empty()) out.push_back("Okay.");
  return out;
}

const std::string* first_unsatisfied(const BotState& s) {
  for (const auto& id : s.story.objectives) {
    if (!s.satisfied.count(id)) return &id;
  }
  return nullptr;
}

void append(std::string& text, const std::string& part) {
  if (part.empty()) return;
  if (!text.empty()) text += ' ';
  text += part;
}

}  // namespace

std::pair<ClientMessage, BotState> bot_respond(const BotState& state,
                                               std::string_view last_operator_message,
                                               const Domain& domain) {
  BotState next = state;
  ClientMessage msg;
  if (next.closed) {
    msg.text = domain.phrase("close");
    msg.closing = true;
    return {msg, next};
  }
  const std::string lower = to_lower(last_operator_message);
  for (const auto& id : next.story.objectives) {
    const ObjectiveSpec* o = domain.objective(id);
    if (o && !o->marker.empty() && lower.find(o->marker) != std::string::npos) {
      next.satisfied.insert(id);
    }
  }
  if (next.patience > 0) --next.patience;

  if (!next.opened) {
    next.opened = true;
    msg.text = domain.phrase("greeting");
    for (const auto& a : domain.attributes()) {
      auto it = next.story.persona.find(a.name);
      if (it == next.story.persona.end()) continue;
      if (next.story.policy(a.name) != DisclosurePolicy::volunteers) continue;
      append(msg.text, fill(pick(a.answers, next.rng), render_value(it->second)));
      msg.disclosures.push_back({a.label, it->second});
      next.disclosed.insert(a.name);
    }
    if (const std::string* id = first_unsatisfied(next)) {
      append(msg.text, pick(domain.objective(*id)->questions, next.rng));
      msg.inquiry = *id;
    }
    return {msg, next};
  }

  if (!first_unsatisfied(next)) {
    msg.text = domain.phrase("close");
    msg.closing = true;
    next.closed = true;
    return {msg, next};
  }
  if (next.patience == 0) {
    msg.text = domain.phrase("give_up");
    msg.closing = true;
    next.closed = true;
    return {msg, next};
  }

  if (lower.find('?') != std::string::npos) {
    for (const auto& a : domain.attributes()) {
      if (!contains_any(lower, a.cues)) continue;
      next.asked.insert(a.name);
      auto it = next.story.persona.find(a.name);
      if (it == next.story.persona.end()) {
        append(msg.text, domain.phrase("unknown:" + a.name));
        msg.disclosures.push_back({a.label, std::string(kUnknownValue)});
      } else if (next.story.policy(a.name) == DisclosurePolicy::evasive_once &&
                 !next.evaded.count(a.name)) {
        next.evaded.insert(a.name);
        append(msg.text, a.vague_answer);
      } else {
        append(msg.text, fill(pick(a.answers, next.rng), render_value(it->second)));
        msg.disclosures.push_back({a.label, it->second});
        next.disclosed.insert(a.name);
      }
    }
    if (!msg.text.empty()) return {msg, next};
  }

  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(next.rng) < next.p_ask) {
    const std::string& id = *first_unsatisfied(next);
    if (!next.satisfied.empty()) msg.text = pick(split_lines(domain.phrase("follow_up")), next.rng);
    append(msg.text, pick(domain.objective(id)->questions, next.rng));
    msg.inquiry = id;
  } else {
    msg.text = pick(split_lines(domain.phrase("ack")), next.rng);
  }
  return {msg, next};
}

std::string_view to_string(OperatorMode mode) {
  switch (mode) {
    case OperatorMode::follows_advice: return "follows_advice";
    case OperatorMode::ignores_advice: return "ignores_advice";
    case OperatorMode::expert: return "expert";
  }
  return "expert";
}

std::optional<std::string> ClientView::value_of(std::string_view label) const {
  if (!schema) return std::nullopt;
  auto i = schema->labels.index_of(label);
  if (!i || *i >= vector.size() || !vector.present[*i]) return std::nullopt;
  return vector.values[*i];
}

bool ClientView::known(std::string_view label) const { return value_of(label).has_value(); }

namespace {

int asks(const ClientView& view, const std::string& label) {
  auto it = view.ask_counts.find(label);
  return it == view.ask_counts.end() ? 0 : it->second;
}

bool settled(const ClientView& view, const std::string& label) {
  return view.known(label) || asks(view, label) >= 2;
}

std::vector<std::string> needed_resources(const ClientView& view, const ObjectiveSpec& o) {
  std::vector<std::string> out;
  for (const auto& rule : o.resources) {
    bool ok = true;
    for (const auto& [label, value] : rule.when) {
      auto v = view.value_of(label);
      if (!v || *v != value) ok = false;
    }
    if (ok && std::find(out.begin(), out.end(), rule.item) == out.end()) out.push_back(rule.item);
  }
  return out;
}

// Item ids of a recommendation, first option first.
std::vector<std::string> advised(const ClientView& view, AdviceType type) {
  std::vector<std::string> out;
  auto it = view.advice.find(type);
  if (it == view.advice.end()) return out;
  for (const auto& option : it->second.items) {
    for (const auto& id : option.item_ids) out.push_back(id);
  }
  return out;
}

void ask(OperatorAction& action, const Domain& domain, const std::string& label) {
  const AdviceItem* item = domain.ask_item(label);
  action.asked_label = label;
  if (item) {
    action.text = item->template_text;
    action.acts.push_back(item->id);
  } else {
    action.text = "Can you tell me your " + render_value(label) + "?";
  }
}

std::optional<std::string> fixed_order_next(const ClientView& view, const Domain& domain) {
  for (const auto& a : domain.attributes()) {
    if (!settled(view, a.label)) return a.label;
  }
  return std::nullopt;
}

}  // namespace

OperatorAction scripted_operator_step(const ClientView& view, const Domain& domain,
                                      OperatorMode mode, const TimingModel& timing,
                                      std::mt19937_64& rng, double noise) {
  OperatorAction action;
  action.effort_ms = timing.read_ms;
  const bool follows = mode == OperatorMode::follows_advice;

  if (follows) {
    for (const auto& id : advised(view, AdviceType::useful_information)) {
      if (view.opened.count(id)) continue;
      if (std::find(action.resources.begin(), action.resources.end(), id) != action.resources.end()) {
        continue;
      }
      action.resources.push_back(id);
      action.accepted_items.push_back(id);
      action.effort_ms += timing.advice_ms;
    }
  }

  const ObjectiveSpec* inquiry = nullptr;
  if (auto v = view.value_of(domain.inquiry_label())) inquiry = domain.objective(*v);

  if (!inquiry || view.provided.count(inquiry->resolution)) {
    action.text = domain.phrase(inquiry ? "anything_else" : "greet");
    action.effort_ms += timing.type_ms / 3;
    return action;
  }

  std::vector<std::string> missing;
  for (const auto& label : inquiry->requires_labels) {
    if (!settled(view, label)) missing.push_back(label);
  }

  if (!missing.empty()) {
    if (mode == OperatorMode::expert) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::string label = missing.front();
      const double r = u(rng);
      if (r < noise / 2) {
        std::vector<std::string> others;
        for (const auto& a : domain.attributes()) {
          if (!settled(view, a.label) &&
              std::find(missing.begin(), missing.end(), a.label) == missing.end()) {
            others.push_back(a.label);
          }
        }
        if (!others.empty()) label = pick(others, rng);
      } else if (r < noise) {
        label = pick(missing, rng);
      }
      ask(action, domain, label);
      action.effort_ms += timing.type_ms;
      return action;
    }
    if (follows) {
      for (const auto& id : advised(view, AdviceType::topic_acquisition)) {
        const AdviceItem* item = domain.catalog().find(id);
        if (!item || !item->action_ref || settled(view, *item->action_ref)) continue;
        ask(action, domain, *item->action_ref);
        action.accepted_items.push_back(id);
        action.effort_ms += timing.advice_ms;
        return action;
      }
    }
    if (auto label = fixed_order_next(view, domain)) {
      ask(action, domain, *label);
      action.effort_ms += timing.type_ms;
      return action;
    }
  }

  // Everything needed is known: open resources, then resolve.
  for (const auto& id : needed_resources(view, *inquiry)) {
    if (view.opened.count(id) ||
        std::find(action.resources.begin(), action.resources.end(), id) != action.resources.end()) {
      continue;
    }
    action.resources.push_back(id);
    action.effort_ms += mode == OperatorMode::expert ? timing.resource_ms : timing.lookup_ms;
  }
  const AdviceItem& resolution = domain.catalog().at(inquiry->resolution);
  action.text = resolution.template_text;
  action.acts.push_back(resolution.id);
  if (mode == OperatorMode::expert) {
    action.effort_ms += timing.type_ms;
  } else {
    const auto recommended = advised(view, AdviceType::resolution);
    if (follows && std::find(recommended.begin(), recommended.end(), resolution.id) != recommended.end()) {
      action.accepted_items.push_back(resolution.id);
      action.effort_ms += timing.advice_ms;
    } else {
      action.effort_ms += timing.lookup_ms + timing.type_ms;
    }
  }
  return action;
}

}  // namespace chatassist
