#pragma once

#include "curveclust/common.hpp"
#include "curveclust/discriminant.hpp"
#include "curveclust/mixhmmr.hpp"
#include "curveclust/mixreg.hpp"
#include "curveclust/mixrhlp.hpp"
#include "curveclust/pwrm.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <variant>

namespace curveclust {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// JSON text with every floating-point number written with 17 significant digits.
std::string dump_json(const Json& doc, int indent = 2);
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

Json basis_to_json(const BasisSpec& basis);
BasisSpec basis_from_json(const Json& j);

Json to_json(const MixRegParams& params);
Json to_json(const PwrmParams& params);
Json to_json(const MixHmmrParams& params);
Json to_json(const RhlpParams& params);
Json to_json(const MixRhlpParams& params);
Json to_json(const FldaModel& model);
Json to_json(const FmdaModel& model);
Json to_json(const FitReport& report);
Json to_json(const CriterionValues& criteria);

MixRegParams mixreg_from_json(const Json& j);
PwrmParams pwrm_from_json(const Json& j);
MixHmmrParams mixhmmr_from_json(const Json& j);
RhlpParams rhlp_from_json(const Json& j);
MixRhlpParams mixrhlp_from_json(const Json& j);
FldaModel flda_from_json(const Json& j);
FmdaModel fmda_from_json(const Json& j);

using AnyModel = std::variant<MixRegParams, PwrmParams, MixHmmrParams, RhlpParams, MixRhlpParams, FldaModel, FmdaModel>;

std::string family_of(const AnyModel& model);
Json model_to_json(const AnyModel& model);
/// Dispatches on the "family" tag; checks schema_version.
AnyModel model_from_json(const Json& j);

void save_model(const std::filesystem::path& path, const AnyModel& model);
AnyModel load_model(const std::filesystem::path& path);

}  // namespace curveclust
