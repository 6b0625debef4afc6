#pragma once

#include "fame/attack.hpp"
#include "fame/bounds.hpp"
#include "fame/certificate.hpp"
#include "fame/domain.hpp"
#include "fame/error.hpp"
#include "fame/explanation.hpp"
#include "fame/input_io.hpp"
#include "fame/network.hpp"
#include "fame/network_io.hpp"
#include "fame/oracle.hpp"
#include "fame/pipeline.hpp"
#include "fame/report.hpp"
