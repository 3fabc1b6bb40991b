#include "levyfilter/serialization.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "levyfilter/errors.hpp"

namespace levyfilter {

void reject_unknown_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                         std::string_view context) {
  if (!object.is_object()) throw ConfigError(fmt::format("{}: expected an object", context));
  for (const auto& [key, value] : object.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError(fmt::format("unknown key '{}.{}'", context, key));
  }
}

namespace {

template <class T>
T get(const Json& j, std::string_view key, std::string_view context) {
  const auto it = j.find(std::string(key));
  if (it == j.end()) throw ConfigError(fmt::format("missing key '{}.{}'", context, key));
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("key '{}.{}' has the wrong type", context, key));
  }
}

template <class T>
T get_or(const Json& j, std::string_view key, T fallback, std::string_view context) {
  if (!j.contains(std::string(key))) return fallback;
  return get<T>(j, key, context);
}

Json field_to_json(const Field& f, std::string_view name) {
  if (!f.serializable()) {
    throw InvalidArgument(fmt::format("coefficient '{}' has no expression source", name));
  }
  return f.source();
}

Field field_from_json(const Json& j, std::string_view key, std::size_t rows, std::size_t cols,
                      const FieldSignature& sig, std::string_view context) {
  const auto name = fmt::format("{}.{}", context, key);
  const auto exprs = get<std::vector<std::string>>(j, key, context);
  return Field::from_expressions(rows, cols, exprs, sig, name);
}

Json intensity_to_json(const Intensity& lambda) {
  switch (lambda.kind()) {
    case Intensity::Kind::constant: return Json{{"constant", lambda.c0()}};
    case Intensity::Kind::logistic:
      return Json{{"logistic", {{"c0", lambda.c0()}, {"c1", lambda.c1()}, {"a", lambda.a()}}}};
    case Intensity::Kind::callback: break;
  }
  throw InvalidArgument("callback intensities cannot be serialized");
}

Intensity intensity_from_json(const Json& j, std::string_view context) {
  reject_unknown_keys(j, {"constant", "logistic"}, context);
  try {
    if (j.contains("constant")) return Intensity::constant(get<double>(j, "constant", context));
    if (j.contains("logistic")) {
      const auto& l = j.at("logistic");
      const auto ctx = fmt::format("{}.logistic", context);
      reject_unknown_keys(l, {"c0", "c1", "a"}, ctx);
      return Intensity::logistic(get<double>(l, "c0", ctx), get<double>(l, "c1", ctx),
                                 get<double>(l, "a", ctx));
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("{}: {}", context, e.what()));
  }
  throw ConfigError(fmt::format("{}: expected 'constant' or 'logistic'", context));
}

ModelPreset preset_from_params(const Json& model) {
  reject_unknown_keys(model, {"preset", "params"}, "model");
  const auto name = get<std::string>(model, "preset", "model");
  const Json params = model.contains("params") ? model.at("params") : Json::object();
  if (name == "example6") {
    reject_unknown_keys(params, {"sigma1", "sigma2", "x0", "z0", "lambda", "epsilon"},
                        "model.params");
    try {
      return build_example6(get_or(params, "sigma1", 1.0, "model.params"),
                            get_or(params, "sigma2", std::numbers::sqrt2, "model.params"),
                            get_or(params, "x0", 0.0, "model.params"),
                            get_or(params, "z0", 0.0, "model.params"),
                            get_or(params, "lambda", 0.8, "model.params"),
                            get_or(params, "epsilon", 0.1, "model.params"));
    } catch (const InvalidArgument& e) {
      throw ConfigError(fmt::format("model.params: {}", e.what()));
    }
  }
  if (name == "linear_gaussian") {
    reject_unknown_keys(params, {"a", "c", "sigma", "x0"}, "model.params");
    return build_linear_gaussian(get_or(params, "a", 1.0, "model.params"),
                                 get_or(params, "c", 0.0, "model.params"),
                                 get_or(params, "sigma", 1.0, "model.params"),
                                 get_or(params, "x0", 0.0, "model.params"));
  }
  throw ConfigError(fmt::format("unknown preset '{}' at 'model.preset'", name));
}

}  // namespace

Json measure_to_json(const LevyMeasureSpec& spec) {
  return Json{{"intensity", spec.total_intensity()}, {"marks", spec.marks().to_string()}};
}

LevyMeasureSpec measure_from_json(const Json& j, Region region, std::string_view context) {
  reject_unknown_keys(j, {"intensity", "marks"}, context);
  const double intensity = get<double>(j, "intensity", context);
  const auto marks = get_or<std::string>(j, "marks", "point(0)", context);
  try {
    return LevyMeasureSpec(intensity, MarkSampler::parse(marks), region);
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("{}: {}", context, e.what()));
  }
}

Json preset_to_json(const ModelPreset& preset) {
  const auto& s = preset.slow_fast;
  const auto& o = preset.observation;
  Json model{
      {"name", preset.name},
      {"n", s.n},
      {"m", s.m},
      {"l", s.l},
      {"epsilon", s.epsilon},
      {"x0", s.x0},
      {"z0", s.z0},
      {"b1", field_to_json(s.b1, "b1")},
      {"sigma1", field_to_json(s.sigma1, "sigma1")},
      {"f1", field_to_json(s.f1, "f1")},
      {"b2", field_to_json(s.b2, "b2")},
      {"sigma2", field_to_json(s.sigma2, "sigma2")},
      {"f2", field_to_json(s.f2, "f2")},
      {"nu1", measure_to_json(s.nu1)},
      {"nu2", measure_to_json(s.nu2)},
  };
  if (s.ou_sigma2) model["fast_ou_sigma2"] = *s.ou_sigma2;
  if (s.bounds) model["bounds"] = {{"L1", s.bounds->L1}, {"L2", s.bounds->L2}, {"L3", s.bounds->L3}};

  Json observation{
      {"d", o.d},
      {"h", field_to_json(o.h, "h")},
      {"h_bound", std::isfinite(o.h_bound) ? Json(o.h_bound) : Json(nullptr)},
      {"f3", field_to_json(o.f3, "f3")},
      {"g3", field_to_json(o.g3, "g3")},
      {"lambda", intensity_to_json(o.lambda)},
      {"lambda_lower", o.lambda_lower},
      {"nu3_small", measure_to_json(o.nu3_small)},
      {"nu3_large", measure_to_json(o.nu3_large)},
  };
  return Json{{"model", std::move(model)}, {"observation", std::move(observation)}};
}

ModelPreset preset_from_json(const Json& model, const Json* observation) {
  if (!model.is_object()) throw ConfigError("'model' must be an object");
  if (model.contains("preset")) {
    if (observation != nullptr) {
      throw ConfigError("unknown key 'observation' (not allowed together with 'model.preset')");
    }
    return preset_from_params(model);
  }
  if (observation == nullptr) throw ConfigError("missing key 'observation'");

  reject_unknown_keys(model,
                      {"name", "n", "m", "l", "epsilon", "x0", "z0", "b1", "sigma1", "f1", "b2",
                       "sigma2", "f2", "nu1", "nu2", "fast_ou_sigma2", "bounds"},
                      "model");
  ModelPreset p;
  p.name = get_or<std::string>(model, "name", "inline", "model");
  auto& s = p.slow_fast;
  s.n = get<std::size_t>(model, "n", "model");
  s.m = get<std::size_t>(model, "m", "model");
  s.l = get<std::size_t>(model, "l", "model");
  s.epsilon = get<double>(model, "epsilon", "model");
  s.x0 = get<std::vector<double>>(model, "x0", "model");
  s.z0 = get<std::vector<double>>(model, "z0", "model");
  if (model.contains("nu1")) s.nu1 = measure_from_json(model.at("nu1"), Region::U1, "model.nu1");
  if (model.contains("nu2")) s.nu2 = measure_from_json(model.at("nu2"), Region::U2, "model.nu2");
  const std::size_t k1 = s.nu1.marks().dim();
  const std::size_t k2 = s.nu2.marks().dim();
  const FieldSignature xz{s.n, s.m, 0, false};
  s.b1 = field_from_json(model, "b1", s.n, 1, xz, "model");
  s.sigma1 = field_from_json(model, "sigma1", s.n, s.l, xz, "model");
  s.f1 = field_from_json(model, "f1", s.n, 1, {s.n, 0, k1, false}, "model");
  s.b2 = field_from_json(model, "b2", s.m, 1, xz, "model");
  s.sigma2 = field_from_json(model, "sigma2", s.m, s.m, xz, "model");
  s.f2 = field_from_json(model, "f2", s.m, 1, {s.n, s.m, k2, false}, "model");
  if (model.contains("fast_ou_sigma2")) s.ou_sigma2 = get<double>(model, "fast_ou_sigma2", "model");
  if (model.contains("bounds")) {
    const auto& b = model.at("bounds");
    reject_unknown_keys(b, {"L1", "L2", "L3"}, "model.bounds");
    s.bounds = BoundConstants{get<double>(b, "L1", "model.bounds"),
                              get<double>(b, "L2", "model.bounds"),
                              get<double>(b, "L3", "model.bounds")};
  }
  try {
    s.check();
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("model: {}", e.what()));
  }

  const auto& oj = *observation;
  reject_unknown_keys(oj,
                      {"d", "h", "h_bound", "f3", "g3", "lambda", "lambda_lower", "nu3_small",
                       "nu3_large"},
                      "observation");
  auto& o = p.observation;
  o.d = get<std::size_t>(oj, "d", "observation");
  if (oj.contains("nu3_small")) {
    o.nu3_small = measure_from_json(oj.at("nu3_small"), Region::U3, "observation.nu3_small");
  }
  if (oj.contains("nu3_large")) {
    o.nu3_large =
        measure_from_json(oj.at("nu3_large"), Region::U3_complement, "observation.nu3_large");
  }
  o.h = field_from_json(oj, "h", o.d, 1, {s.n, s.m, 0, false}, "observation");
  const auto hb = oj.find("h_bound");
  o.h_bound = (hb == oj.end() || hb->is_null()) ? std::numeric_limits<double>::infinity()
                                                 : get<double>(oj, "h_bound", "observation");
  o.f3 = field_from_json(oj, "f3", o.d, 1, {0, 0, o.nu3_small.marks().dim(), true},
                         "observation");
  o.g3 = field_from_json(oj, "g3", o.d, 1, {0, 0, o.nu3_large.marks().dim(), true},
                         "observation");
  o.lambda = oj.contains("lambda") ? intensity_from_json(oj.at("lambda"), "observation.lambda")
                                   : Intensity::constant(1.0);
  o.lambda_lower = get_or(oj, "lambda_lower", 0.0, "observation");
  try {
    o.check(s);
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("observation: {}", e.what()));
  }
  return p;
}

}  // namespace levyfilter
