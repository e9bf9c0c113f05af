#pragma once

#include <stdexcept>
#include <string>

namespace foodcrowd {

// Root of every error the library throws on purpose. Callers that only care
// about "a pipeline stage failed" catch this; everything else is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;

    // Retryable errors describe transient conditions (network, remote
    // backend); a caller may try the same operation again later.
    virtual bool retryable() const noexcept { return false; }
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration, reported before a stage starts.
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ProviderUnreachable : public Error {
public:
    using Error::Error;
    bool retryable() const noexcept override { return true; }
};

class FetchError : public Error {
public:
    enum class Kind { BadUrl, Connection, Timeout, HttpStatus, Oversize };

    FetchError(Kind kind, std::string url, const std::string& what, int status = 0)
        : Error(what), kind_(kind), url_(std::move(url)), status_(status) {}

    Kind kind() const noexcept { return kind_; }
    const std::string& url() const noexcept { return url_; }
    int status() const noexcept { return status_; }
    bool retryable() const noexcept override {
        return kind_ == Kind::Connection || kind_ == Kind::Timeout;
    }

private:
    Kind kind_;
    std::string url_;
    int status_;
};

class DecodeError : public Error {
public:
    using Error::Error;
};

class BackendUnavailable : public Error {
public:
    using Error::Error;
    bool retryable() const noexcept override { return true; }
};

class MissingScore : public Error {
public:
    explicit MissingScore(std::string image_id)
        : Error("image " + image_id + " has no foodness score"), image_id_(std::move(image_id)) {}
    const std::string& image_id() const noexcept { return image_id_; }

private:
    std::string image_id_;
};

class PoolTooSmall : public Error {
public:
    using Error::Error;
};

class IllegalTransition : public Error {
public:
    using Error::Error;
};

class DuplicateSeq : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

// The caller does not hold the current lease for the image it tried to mutate.
class LeaseConflict : public Error {
public:
    using Error::Error;
};

}  // namespace foodcrowd
