#pragma once

#include <stdexcept>
#include <string>

namespace protokit {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DuplicateProtocolId : Error {
  using Error::Error;
};
struct RuntimeAlreadyStarted : Error {
  using Error::Error;
};
struct NoProtocolsRegistered : Error {
  using Error::Error;
};
struct UnknownProtocol : Error {
  using Error::Error;
};
struct DuplicateHandler : Error {
  using Error::Error;
};
struct NoHandlerRegistered : Error {
  using Error::Error;
};
struct NonPositivePeriod : Error {
  using Error::Error;
};
struct UnknownChannelName : Error {
  using Error::Error;
};
struct UnknownChannel : Error {
  using Error::Error;
};
struct MissingProperty : Error {
  using Error::Error;
};
struct BindFailure : Error {
  using Error::Error;
};
struct DuplicateSerializer : Error {
  using Error::Error;
};
struct NoSerializer : Error {
  using Error::Error;
};
struct OperationUnsupported : Error {
  using Error::Error;
};
struct InvalidConfig : Error {
  using Error::Error;
};
struct UnknownNode : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ScenarioParseError : Error {
  using Error::Error;
};
struct DecodeError : Error {
  using Error::Error;
};

}  // namespace protokit
